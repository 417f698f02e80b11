//! Rates, harvested power and beampattern gain of a candidate design.

use rand::Rng;
use serde::Serialize;

use crate::config::{Side, SystemConfig};
use crate::geometry::{sample_uncertainty, ChannelSet};
use crate::{CMatrix, CVector, C64};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("index {index} out of range ({len} available)")]
    Index { index: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Beamformers {
    Vectors(Vec<CVector>),
    Lifted(Vec<CMatrix>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmitDesign {
    pub beams: Beamformers,
    /// Sensing covariance.
    pub v: CMatrix,
}

impl TransmitDesign {
    pub fn from_vectors(w: Vec<CVector>, v: CMatrix) -> Self {
        Self { beams: Beamformers::Vectors(w), v }
    }

    pub fn from_lifted(w: Vec<CMatrix>, v: CMatrix) -> Self {
        Self { beams: Beamformers::Lifted(w), v }
    }

    pub fn k(&self) -> usize {
        match &self.beams {
            Beamformers::Vectors(w) => w.len(),
            Beamformers::Lifted(w) => w.len(),
        }
    }

    pub fn m(&self) -> usize {
        self.v.nrows()
    }

    /// `W_k`, lifting vectors if needed.
    pub fn lifted(&self) -> Vec<CMatrix> {
        match &self.beams {
            Beamformers::Vectors(w) => w.iter().map(|w| w * w.adjoint()).collect(),
            Beamformers::Lifted(w) => w.clone(),
        }
    }

    pub fn total_power(&self) -> f64 {
        let beams: f64 = match &self.beams {
            Beamformers::Vectors(w) => w.iter().map(|w| w.norm_squared()).sum(),
            Beamformers::Lifted(w) => w.iter().map(|w| w.trace().re).sum(),
        };
        beams + self.v.trace().re
    }
}

/// Coefficients of one side of the surface.
#[derive(Debug, Clone, PartialEq)]
pub struct SideCoefficients {
    pub phi: CVector,
    pub beta: Vec<f64>,
    /// Lifted form `phi phi^H`, or a general PSD matrix during relaxation.
    pub q: CMatrix,
}

impl SideCoefficients {
    pub fn from_phi(phi: CVector) -> Self {
        let beta = phi.iter().map(|p| p.norm_sqr()).collect();
        let q = &phi * phi.adjoint();
        Self { phi, beta, q }
    }

    /// Coefficients carrying a general lifted matrix; `phi` is its scaled
    /// dominant eigenvector.
    pub fn from_lifted(q: CMatrix) -> Self {
        let (vals, vecs) = nfstar_conic::eigh_desc(&q);
        let phi = vecs.column(0) * C64::new(vals[0].max(0.0).sqrt(), 0.0);
        let beta = (0..q.nrows()).map(|n| q[(n, n)].re).collect();
        Self { phi, beta, q }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarCoefficients {
    pub t: SideCoefficients,
    pub r: SideCoefficients,
}

impl StarCoefficients {
    pub fn new(t: SideCoefficients, r: SideCoefficients) -> Self {
        Self { t, r }
    }

    pub fn side(&self, s: Side) -> &SideCoefficients {
        match s {
            Side::T => &self.t,
            Side::R => &self.r,
        }
    }

    pub fn n(&self) -> usize {
        self.t.phi.len()
    }

    /// `max_n |beta_t + beta_r - 1|`
    pub fn beta_residual(&self) -> f64 {
        self.t.beta.iter().zip(&self.r.beta).map(|(a, b)| (a + b - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Equal split with independent uniform phases on both sides.
    pub fn random_equal_split<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut side = || {
            let a = 0.5f64.sqrt();
            SideCoefficients::from_phi(CVector::from_iterator(
                n,
                (0..n).map(|_| C64::from_polar(a, rng.random_range(0.0..std::f64::consts::TAU))),
            ))
        };
        let t = side();
        let r = side();
        Self { t, r }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Thresholds {
    pub r_th: f64,
    pub r_eth: f64,
    pub lambda_gain: f64,
    pub p_max: f64,
    pub noise_ir: f64,
    pub noise_er: f64,
    pub eh_efficiency: Vec<f64>,
}

impl Thresholds {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        Self {
            r_th: cfg.r_th,
            r_eth: cfg.r_eth,
            lambda_gain: cfg.lambda_gain(),
            p_max: cfg.p_max,
            noise_ir: cfg.noise_ir(),
            noise_er: cfg.noise_er(),
            eh_efficiency: vec![cfg.eh_efficiency; cfg.num_er],
        }
    }

    pub fn gamma(&self) -> f64 {
        sinr_thresholds(self.r_th, self.r_eth).0
    }

    pub fn eta(&self) -> f64 {
        sinr_thresholds(self.r_th, self.r_eth).1
    }
}

/// `(2^R_th - 1, 2^R_eth - 1)`
pub fn sinr_thresholds(r_th: f64, r_eth: f64) -> (f64, f64) {
    (2f64.powf(r_th) - 1.0, 2f64.powf(r_eth) - 1.0)
}

/// Per-beam received powers and the sensing-signal power through one
/// cascaded channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkPowers {
    pub beams: Vec<f64>,
    pub sensing: f64,
}

impl LinkPowers {
    pub fn total(&self) -> f64 {
        self.beams.iter().sum::<f64>() + self.sensing
    }

    /// Desired-beam power over interference plus noise.
    pub fn sinr(&self, k: usize, noise: f64) -> f64 {
        let interference: f64 = self.beams.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, p)| p).sum();
        self.beams[k] / (interference + self.sensing + noise)
    }
}

/// Vector designs use `|phi^H H w|^2`; lifted designs use `tr(W H^H Q H)`.
pub fn link_powers(h: &CMatrix, side: &SideCoefficients, design: &TransmitDesign) -> Result<LinkPowers, MetricsError> {
    if h.nrows() != side.phi.len() || h.ncols() != design.m() {
        return Err(MetricsError::Dimension(format!(
            "channel {}x{}, surface {}, antennas {}",
            h.nrows(),
            h.ncols(),
            side.phi.len(),
            design.m()
        )));
    }
    match &design.beams {
        Beamformers::Vectors(ws) => {
            let a = h.adjoint() * &side.phi;
            let beams = ws.iter().map(|w| a.dotc(w).norm_sqr()).collect();
            let sensing = (a.adjoint() * &design.v * &a)[(0, 0)].re;
            Ok(LinkPowers { beams, sensing })
        }
        Beamformers::Lifted(ws) => {
            let b = h.adjoint() * &side.q * h;
            let beams = ws.iter().map(|w| nfstar_conic::re_trace_product(w, &b)).collect();
            let sensing = nfstar_conic::re_trace_product(&design.v, &b);
            Ok(LinkPowers { beams, sensing })
        }
    }
}

fn check_index(index: usize, len: usize) -> Result<(), MetricsError> {
    if index >= len {
        Err(MetricsError::Index { index, len })
    } else {
        Ok(())
    }
}

/// Rate of IR `k` through an explicit cascaded channel.
pub fn ir_rate_with(k: usize, h: &CMatrix, side: &SideCoefficients, design: &TransmitDesign, noise: f64) -> Result<f64, MetricsError> {
    check_index(k, design.k())?;
    let lp = link_powers(h, side, design)?;
    Ok((1.0 + lp.sinr(k, noise)).log2())
}

pub fn ir_rate(
    k: usize,
    design: &TransmitDesign,
    star: &StarCoefficients,
    channels: &ChannelSet,
    thresholds: &Thresholds,
) -> Result<f64, MetricsError> {
    check_index(k, channels.k())?;
    ir_rate_with(k, &channels.h_hat[k], star.side(channels.ir_side[k]), design, thresholds.noise_ir)
}

/// Rate at which ER `e` can decode the stream of IR `k`.
pub fn eve_rate(
    e: usize,
    k: usize,
    design: &TransmitDesign,
    star: &StarCoefficients,
    channels: &ChannelSet,
    thresholds: &Thresholds,
) -> Result<f64, MetricsError> {
    check_index(e, channels.e())?;
    ir_rate_with(k, &channels.f_hat[e], star.side(channels.er_side[e]), design, thresholds.noise_er)
}

pub fn harvested_power(
    e: usize,
    design: &TransmitDesign,
    star: &StarCoefficients,
    channels: &ChannelSet,
    thresholds: &Thresholds,
) -> Result<f64, MetricsError> {
    check_index(e, channels.e())?;
    let lp = link_powers(&channels.f_hat[e], star.side(channels.er_side[e]), design)?;
    Ok(thresholds.eh_efficiency[e] * lp.total())
}

pub fn beampattern_gain(
    t: usize,
    design: &TransmitDesign,
    star: &StarCoefficients,
    channels: &ChannelSet,
) -> Result<f64, MetricsError> {
    check_index(t, channels.t())?;
    Ok(link_powers(&channels.ht_hat[t], star.side(channels.tar_side[t]), design)?.total())
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstraintCheck {
    pub name: String,
    /// Slack at the estimated channels (negative when violated).
    pub nominal_margin: f64,
    /// Smallest slack over all sampled perturbations.
    pub worst_sampled_margin: f64,
    pub violations: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityReport {
    pub checks: Vec<ConstraintCheck>,
    pub ir_rates: Vec<f64>,
    /// `eve_rates[e][k]` at the estimated channels.
    pub eve_rates: Vec<Vec<f64>>,
    pub worst_sampled_eve_rate: f64,
    pub harvested: Vec<f64>,
    pub total_harvested: f64,
    pub beampattern: Vec<f64>,
    pub power_used: f64,
    pub power_budget: f64,
    pub beta_residual: f64,
}

impl FeasibilityReport {
    pub fn total_violations(&self) -> usize {
        self.checks.iter().map(|c| c.violations).sum()
    }

    pub fn check(&self, name: &str) -> Option<&ConstraintCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Tolerances used to count a margin as violated, in the units of each
/// constraint (bit/s/Hz for rates, watts for powers).
#[derive(Debug, Clone, Copy)]
pub struct FeasibilityTolerances {
    pub rate: f64,
    /// Relative to the beampattern level.
    pub gain_rel: f64,
    pub power_rel: f64,
}

impl Default for FeasibilityTolerances {
    fn default() -> Self {
        Self { rate: 1e-3, gain_rel: 1e-5, power_rel: 1e-6 }
    }
}

/// Evaluates every constraint at the estimated channels and at
/// `samples` random perturbations of each node's cascaded channel.
pub fn check_feasibility<R: Rng + ?Sized>(
    design: &TransmitDesign,
    star: &StarCoefficients,
    channels: &ChannelSet,
    thresholds: &Thresholds,
    samples: usize,
    tol: FeasibilityTolerances,
    rng: &mut R,
) -> Result<FeasibilityReport, MetricsError> {
    let mut checks = Vec::new();
    let (n, m) = (channels.n(), channels.m());
    let perturbed = |h: &CMatrix, delta: f64, rng: &mut R| -> Vec<CMatrix> {
        if delta <= 0.0 {
            return Vec::new();
        }
        (0..samples).map(|_| h + sample_uncertainty(delta, n, m, 0.5, rng)).collect()
    };
    let mut record = |name: String, nominal: f64, sampled: Vec<f64>, slack_tol: f64| {
        let worst = sampled.iter().copied().fold(nominal, f64::min);
        let violations = std::iter::once(nominal).chain(sampled.iter().copied()).filter(|&v| v < -slack_tol).count();
        checks.push(ConstraintCheck { name, nominal_margin: nominal, worst_sampled_margin: worst, violations, samples: sampled.len() + 1 });
    };

    let mut ir_rates = Vec::new();
    for k in 0..channels.k() {
        let side = star.side(channels.ir_side[k]);
        let nominal = ir_rate_with(k, &channels.h_hat[k], side, design, thresholds.noise_ir)?;
        ir_rates.push(nominal);
        let sampled = perturbed(&channels.h_hat[k], channels.delta_ir[k], rng)
            .iter()
            .map(|h| ir_rate_with(k, h, side, design, thresholds.noise_ir).map(|r| r - thresholds.r_th))
            .collect::<Result<Vec<_>, _>>()?;
        record(format!("ir_rate[{k}]"), nominal - thresholds.r_th, sampled, tol.rate);
    }

    let mut eve_rates = Vec::new();
    let mut worst_eve = f64::NEG_INFINITY;
    let mut harvested = Vec::new();
    for e in 0..channels.e() {
        let side = star.side(channels.er_side[e]);
        let hs = perturbed(&channels.f_hat[e], channels.delta_er[e], rng);
        let mut row = Vec::new();
        for k in 0..channels.k() {
            let nominal = ir_rate_with(k, &channels.f_hat[e], side, design, thresholds.noise_er)?;
            row.push(nominal);
            let sampled_rates =
                hs.iter().map(|h| ir_rate_with(k, h, side, design, thresholds.noise_er)).collect::<Result<Vec<_>, _>>()?;
            worst_eve = sampled_rates.iter().copied().fold(worst_eve.max(nominal), f64::max);
            record(
                format!("eve_rate[{e},{k}]"),
                thresholds.r_eth - nominal,
                sampled_rates.iter().map(|r| thresholds.r_eth - r).collect(),
                tol.rate,
            );
        }
        eve_rates.push(row);
        harvested.push(thresholds.eh_efficiency[e] * link_powers(&channels.f_hat[e], side, design)?.total());
    }

    let mut beampattern = Vec::new();
    for t in 0..channels.t() {
        let side = star.side(channels.tar_side[t]);
        let nominal = link_powers(&channels.ht_hat[t], side, design)?.total();
        beampattern.push(nominal);
        let sampled = perturbed(&channels.ht_hat[t], channels.delta_tar[t], rng)
            .iter()
            .map(|h| link_powers(h, side, design).map(|lp| lp.total() - thresholds.lambda_gain))
            .collect::<Result<Vec<_>, _>>()?;
        record(format!("beampattern[{t}]"), nominal - thresholds.lambda_gain, sampled, tol.gain_rel * thresholds.lambda_gain);
    }

    let power_used = design.total_power();
    record("power".into(), thresholds.p_max - power_used, Vec::new(), tol.power_rel * thresholds.p_max);
    let beta_residual = star.beta_residual();
    record("beta_conservation".into(), -beta_residual, Vec::new(), 1e-6);

    Ok(FeasibilityReport {
        checks,
        ir_rates,
        eve_rates,
        worst_sampled_eve_rate: worst_eve,
        total_harvested: harvested.iter().sum(),
        harvested,
        beampattern,
        power_used,
        power_budget: thresholds.p_max,
        beta_residual,
    })
}
