//! Experiment description and its TOML form.

use std::path::PathBuf;

use nfstar_core::ao::BaselineKind;
use nfstar_core::config::SystemConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SpecError {
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

impl Profile {
    pub fn system(self) -> SystemConfig {
        match self {
            Profile::Desk => SystemConfig::desk(),
            Profile::Paper => SystemConfig::paper(),
        }
    }
}

/// Quantity on the horizontal axis of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// AO iteration index; no sweep values.
    Iter,
    /// Transmit power budget (W).
    Power,
    /// IR rate requirement (bit/s/Hz).
    Rate,
}

impl Axis {
    pub fn label(self) -> &'static str {
        match self {
            Axis::Iter => "iter",
            Axis::Power => "power",
            Axis::Rate => "rate",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Axis::Iter => "AO iteration",
            Axis::Power => "transmit power budget (W)",
            Axis::Rate => "required IR rate (bit/s/Hz)",
        }
    }
}

/// Stopping rule overrides for the alternating loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopSettings {
    pub delta0: f64,
    pub r_max: usize,
}

impl Default for LoopSettings {
    fn default() -> Self {
        Self { delta0: 1e-3, r_max: 15 }
    }
}

/// One Monte-Carlo experiment. Every (scheme, sweep value, rho, lambda)
/// point is run on the same `trials` scenario draws.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub profile: Profile,
    /// Base scenario. Sweep points override `p_max`, `r_th`, `rho` and
    /// `lambda_db`; everything else is shared.
    pub system: SystemConfig,
    pub axis: Axis,
    pub values: Vec<f64>,
    pub rho: Vec<f64>,
    pub lambda_db: Vec<f64>,
    pub schemes: Vec<BaselineKind>,
    pub trials: usize,
    pub seed_base: u64,
    /// Redraws allowed when a draw is infeasible for the proposed scheme
    /// under the base scenario.
    pub max_redraws: usize,
    /// Perturbations per node used when auditing a finished design.
    pub audit_samples: usize,
    pub workers: usize,
    pub ao: LoopSettings,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    #[serde(default = "default_profile")]
    profile: Profile,
    #[serde(default)]
    system: toml::Table,
    #[serde(default = "default_axis")]
    axis: Axis,
    values: Option<Vec<f64>>,
    rho: Option<Vec<f64>>,
    lambda_db: Option<Vec<f64>>,
    schemes: Option<Vec<String>>,
    #[serde(default = "default_trials")]
    trials: usize,
    #[serde(default)]
    seed_base: u64,
    #[serde(default = "default_redraws")]
    max_redraws: usize,
    #[serde(default = "default_samples")]
    audit_samples: usize,
    #[serde(default = "default_workers")]
    workers: usize,
    #[serde(default)]
    ao: LoopSettings,
    out: Option<PathBuf>,
}

fn default_profile() -> Profile {
    Profile::Desk
}
fn default_axis() -> Axis {
    Axis::Power
}
fn default_trials() -> usize {
    20
}
fn default_redraws() -> usize {
    10
}
fn default_samples() -> usize {
    200
}
fn default_workers() -> usize {
    1
}

pub fn default_values(axis: Axis) -> Vec<f64> {
    match axis {
        Axis::Iter => Vec::new(),
        Axis::Power => vec![1.0, 2.0, 5.0, 10.0],
        Axis::Rate => vec![1.0, 2.0, 3.0],
    }
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

pub fn parse_schemes<S: AsRef<str>>(names: &[S]) -> Result<Vec<BaselineKind>, SpecError> {
    names
        .iter()
        .map(|s| {
            let s = s.as_ref().trim();
            BaselineKind::parse(s).ok_or_else(|| SpecError::Invalid(format!("unknown scheme '{s}'")))
        })
        .collect()
}

impl ExperimentSpec {
    /// Defaults of a profile: power sweep of every scheme over 20 draws.
    pub fn for_profile(profile: Profile) -> Self {
        let system = profile.system();
        Self {
            profile,
            axis: Axis::Power,
            values: default_values(Axis::Power),
            rho: vec![system.rho],
            lambda_db: vec![system.lambda_db],
            schemes: BaselineKind::ALL.to_vec(),
            trials: default_trials(),
            seed_base: 0,
            max_redraws: default_redraws(),
            audit_samples: default_samples(),
            workers: 1,
            ao: LoopSettings::default(),
            out: None,
            system,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, SpecError> {
        Self::from_toml_with_profile(text, None)
    }

    /// Parses a configuration; `profile` (when given) replaces the file's
    /// base profile before the file's `[system]` overrides are applied.
    pub fn from_toml_with_profile(text: &str, profile: Option<Profile>) -> Result<Self, SpecError> {
        let raw: RawSpec = toml::from_str(text).map_err(|e| SpecError::Parse(e.to_string()))?;
        let profile = profile.unwrap_or(raw.profile);
        let mut table = toml::Table::try_from(profile.system()).map_err(|e| SpecError::Parse(e.to_string()))?;
        merge(&mut table, &raw.system);
        let system: SystemConfig = table.try_into().map_err(|e: toml::de::Error| SpecError::Parse(e.to_string()))?;
        let spec = Self {
            profile,
            axis: raw.axis,
            values: raw.values.unwrap_or_else(|| default_values(raw.axis)),
            rho: raw.rho.unwrap_or_else(|| vec![system.rho]),
            lambda_db: raw.lambda_db.unwrap_or_else(|| vec![system.lambda_db]),
            schemes: match raw.schemes {
                Some(s) => parse_schemes(&s)?,
                None => BaselineKind::ALL.to_vec(),
            },
            trials: raw.trials,
            seed_base: raw.seed_base,
            max_redraws: raw.max_redraws,
            audit_samples: raw.audit_samples,
            workers: raw.workers,
            ao: raw.ao,
            out: raw.out,
            system,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        let mut t = toml::Table::new();
        let put = |t: &mut toml::Table, k: &str, v: toml::Value| {
            t.insert(k.to_string(), v);
        };
        put(&mut t, "profile", toml::Value::try_from(self.profile).expect("enum"));
        put(&mut t, "axis", toml::Value::try_from(self.axis).expect("enum"));
        put(&mut t, "values", toml::Value::try_from(&self.values).expect("floats"));
        put(&mut t, "rho", toml::Value::try_from(&self.rho).expect("floats"));
        put(&mut t, "lambda_db", toml::Value::try_from(&self.lambda_db).expect("floats"));
        let schemes: Vec<&str> = self.schemes.iter().map(|k| k.label()).collect();
        put(&mut t, "schemes", toml::Value::try_from(schemes).expect("strings"));
        put(&mut t, "trials", toml::Value::Integer(self.trials as i64));
        put(&mut t, "seed_base", toml::Value::Integer(self.seed_base as i64));
        put(&mut t, "max_redraws", toml::Value::Integer(self.max_redraws as i64));
        put(&mut t, "audit_samples", toml::Value::Integer(self.audit_samples as i64));
        put(&mut t, "workers", toml::Value::Integer(self.workers as i64));
        put(&mut t, "ao", toml::Value::try_from(&self.ao).expect("table"));
        put(&mut t, "system", toml::Value::try_from(&self.system).expect("table"));
        toml::to_string_pretty(&t).expect("serializable")
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let bad = |m: String| Err(SpecError::Invalid(m));
        self.system.validate().map_err(SpecError::Invalid)?;
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.schemes.is_empty() {
            return bad("at least one scheme is required".into());
        }
        if self.axis == Axis::Iter {
            if !self.values.is_empty() {
                return bad("the iteration axis takes no sweep values".into());
            }
        } else if self.values.is_empty() {
            return bad("sweep values are required".into());
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("sweep values must be strictly increasing".into());
        }
        if self.values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("sweep values must be positive".into());
        }
        if self.rho.is_empty() || self.rho.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("rho levels must be nonnegative".into());
        }
        if self.lambda_db.is_empty() || self.lambda_db.iter().any(|l| !l.is_finite()) {
            return bad("lambda levels must be finite".into());
        }
        if self.ao.r_max == 0 || !(self.ao.delta0 > 0.0) {
            return bad("ao.r_max and ao.delta0 must be positive".into());
        }
        Ok(())
    }

    /// Scenario of one sweep point.
    pub fn system_at(&self, point: &Point) -> SystemConfig {
        let mut cfg = self.system.clone();
        match (self.axis, point.value) {
            (Axis::Power, Some(v)) => cfg.p_max = v,
            (Axis::Rate, Some(v)) => cfg.r_th = v,
            _ => {}
        }
        cfg.rho = point.rho;
        cfg.lambda_db = point.lambda_db;
        cfg
    }

    /// Every (sweep value, rho, lambda) combination in run order.
    pub fn points(&self) -> Vec<Point> {
        let values: Vec<Option<f64>> =
            if self.axis == Axis::Iter { vec![None] } else { self.values.iter().map(|v| Some(*v)).collect() };
        let mut out = Vec::new();
        for &value in &values {
            for &rho in &self.rho {
                for &lambda_db in &self.lambda_db {
                    out.push(Point { value, rho, lambda_db });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub value: Option<f64>,
    pub rho: f64,
    pub lambda_db: f64,
}
