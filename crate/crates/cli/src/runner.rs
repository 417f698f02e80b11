//! Monte-Carlo trials.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use nfstar_core::active::{solve_relaxed, ActiveConfig, ActiveError};
use nfstar_core::ao::{initial_surface_for, run_baseline, AoConfig, AoError, AoStatus, BaselineKind};
use nfstar_core::config::SystemConfig;
use nfstar_core::geometry::Scenario;
use nfstar_core::metrics::{check_feasibility, FeasibilityTolerances, StarCoefficients, Thresholds};
use nfstar_core::{CMatrix, CVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::spec::{ExperimentSpec, Point};

/// Stream ids of the per-draw generators.
const STREAM_SCENARIO: u64 = 0;
const STREAM_SURFACE: u64 = 1;
const STREAM_AUDIT: u64 = 2;

/// Final design, stored as (re, im) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub w: Vec<Vec<[f64; 2]>>,
    /// Column-major.
    pub v: Vec<[f64; 2]>,
    pub phi_t: Vec<[f64; 2]>,
    pub phi_r: Vec<[f64; 2]>,
}

fn pairs<'a>(it: impl Iterator<Item = &'a nfstar_core::C64>) -> Vec<[f64; 2]> {
    it.map(|z| [z.re, z.im]).collect()
}

impl DesignRecord {
    fn new(w: &[CVector], v: &CMatrix, star: &StarCoefficients) -> Self {
        Self {
            w: w.iter().map(|x| pairs(x.iter())).collect(),
            v: pairs(v.iter()),
            phi_t: pairs(star.t.phi.iter()),
            phi_r: pairs(star.r.phi.iter()),
        }
    }
}

/// Outcome of one scheme on one scenario draw at one sweep point. Contains
/// no wall-clock data, so equal inputs give equal records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    /// Number of discarded draws before this one.
    pub attempt: usize,
    pub seed: u64,
    pub scheme: BaselineKind,
    pub sweep_value: Option<f64>,
    pub rho: f64,
    pub lambda_db: f64,
    /// `converged`, `max_iterations`, `solver_failure`, `infeasible`,
    /// `no_feasible_draw` or `error`.
    pub status: String,
    pub converged: bool,
    /// Meets every robust constraint on the true channel estimates.
    pub feasible: bool,
    /// Worst-case per-ER harvested power (W).
    pub xi: Option<f64>,
    /// Total harvested power at the estimates (W).
    pub total_harvested: Option<f64>,
    /// `total_harvested` for feasible designs, zero otherwise.
    pub delivered: f64,
    pub ir_rates: Vec<f64>,
    pub worst_eve_rate: Option<f64>,
    pub min_beampattern: Option<f64>,
    pub power_used: Option<f64>,
    pub beta_residual: Option<f64>,
    /// Sampled constraint violations of the final design.
    pub audit_violations: Option<usize>,
    /// `lambda_2 / lambda_1` of every `W_k`, then of `Q_t` and `Q_r`.
    pub eigen_ratios: Vec<f64>,
    pub outer_iterations: usize,
    pub srocr_iterations: usize,
    pub penalty_solves: usize,
    pub xi_trace: Vec<f64>,
    pub harvested_trace: Vec<f64>,
    pub channel_digest: String,
    pub design: Option<DesignRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub trial: usize,
    pub scheme: BaselineKind,
    pub sweep_value: Option<f64>,
    pub rho: f64,
    pub lambda_db: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<TrialRecord>,
    pub timings: Vec<Timing>,
    /// Draws discarded by the screen, over all trials.
    pub redraws: usize,
}

impl ExperimentOutput {
    /// Fraction of draws discarded by the screen.
    pub fn drop_rate(&self, trials: usize) -> f64 {
        self.redraws as f64 / (self.redraws + trials) as f64
    }
}

/// Seed of draw `attempt` of trial `trial`. The first draw of trial `i`
/// uses `seed_base + i`, so `simulate --seed` replays it.
pub fn draw_seed(seed_base: u64, trial: usize, attempt: usize) -> u64 {
    let first = seed_base.wrapping_add(trial as u64);
    if attempt == 0 {
        return first;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(first);
    rng.set_stream(attempt as u64);
    rng.next_u64()
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Scenario and initial surface of one draw.
pub fn draw(cfg: &SystemConfig, seed: u64, scheme: BaselineKind) -> Result<(Scenario, StarCoefficients), String> {
    let scenario = Scenario::generate(cfg, &mut stream(seed, STREAM_SCENARIO)).map_err(|e| e.to_string())?;
    let init = initial_surface_for(scheme, cfg.n(), &mut stream(seed, STREAM_SURFACE));
    Ok((scenario, init))
}

pub fn channel_digest(scenario: &Scenario) -> String {
    hex::encode(Sha256::digest(scenario.channels.to_text().as_bytes()))
}

#[derive(Debug, Clone)]
struct Draw {
    seed: u64,
    attempt: usize,
    failure: Option<String>,
}

/// A draw is kept when the proposed scheme's relaxed active program is
/// feasible at its initial surface under the base scenario.
fn screen(spec: &ExperimentSpec, trial: usize) -> Draw {
    let thr = Thresholds::from_config(&spec.system);
    let mut last = Draw { seed: draw_seed(spec.seed_base, trial, 0), attempt: 0, failure: None };
    for attempt in 0..=spec.max_redraws {
        let seed = draw_seed(spec.seed_base, trial, attempt);
        last = Draw { seed, attempt, failure: None };
        let (sc, init) = match draw(&spec.system, seed, BaselineKind::Proposed) {
            Ok(d) => d,
            Err(e) => {
                last.failure = Some(e);
                return last;
            }
        };
        match solve_relaxed(&sc.channels, &thr, [&init.t.q, &init.r.q], &ActiveConfig::default()) {
            Ok(_) => return last,
            Err(ActiveError::Infeasible(_)) => {
                log::debug!("trial {trial}: draw {attempt} infeasible, redrawing");
            }
            Err(e) => {
                last.failure = Some(e.to_string());
                return last;
            }
        }
    }
    last.failure = Some("no_feasible_draw".into());
    last
}

fn empty_record(trial: usize, d: &Draw, scheme: BaselineKind, p: &Point, status: &str, digest: String, error: Option<String>) -> TrialRecord {
    TrialRecord {
        trial,
        attempt: d.attempt,
        seed: d.seed,
        scheme,
        sweep_value: p.value,
        rho: p.rho,
        lambda_db: p.lambda_db,
        status: status.into(),
        converged: false,
        feasible: false,
        xi: None,
        total_harvested: None,
        delivered: 0.0,
        ir_rates: Vec::new(),
        worst_eve_rate: None,
        min_beampattern: None,
        power_used: None,
        beta_residual: None,
        audit_violations: None,
        eigen_ratios: Vec::new(),
        outer_iterations: 0,
        srocr_iterations: 0,
        penalty_solves: 0,
        xi_trace: Vec::new(),
        harvested_trace: Vec::new(),
        channel_digest: digest,
        design: None,
        error,
    }
}

/// JSON has no infinities or NaN.
fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn status_label(s: AoStatus) -> &'static str {
    match s {
        AoStatus::Converged => "converged",
        AoStatus::MaxIterations => "max_iterations",
        AoStatus::SolverFailure => "solver_failure",
    }
}

fn run_job(spec: &ExperimentSpec, trial: usize, d: &Draw, scheme: BaselineKind, p: &Point) -> TrialRecord {
    if let Some(f) = &d.failure {
        let status = if f == "no_feasible_draw" { "no_feasible_draw" } else { "error" };
        return empty_record(trial, d, scheme, p, status, String::new(), Some(f.clone()));
    }
    let cfg = spec.system_at(p);
    let thr = Thresholds::from_config(&cfg);
    let (sc, init) = match draw(&cfg, d.seed, scheme) {
        Ok(x) => x,
        Err(e) => return empty_record(trial, d, scheme, p, "error", String::new(), Some(e)),
    };
    let digest = channel_digest(&sc);
    let ao = AoConfig { delta0: spec.ao.delta0, r_max: spec.ao.r_max, seed: d.seed, ..AoConfig::default() };
    let out = match run_baseline(scheme, &sc, &thr, &init, &ao) {
        Ok(o) => o,
        Err(AoError::Infeasible(m)) => return empty_record(trial, d, scheme, p, "infeasible", digest, Some(m)),
        Err(e) => return empty_record(trial, d, scheme, p, "error", digest, Some(e.to_string())),
    };
    let o = &out.outcome;
    let mut rec = empty_record(trial, d, scheme, p, status_label(o.status), digest, None);
    rec.converged = o.converged();
    rec.feasible = out.feasible;
    rec.xi = finite(out.xi);
    rec.total_harvested = finite(out.total_harvested);
    rec.delivered = if out.feasible { rec.total_harvested.unwrap_or(0.0) } else { 0.0 };
    rec.eigen_ratios = o.w_eigen_ratios.iter().chain(o.q_eigen_ratios.iter()).copied().collect();
    rec.outer_iterations = o.trace.records.len();
    rec.srocr_iterations = o.trace.records.iter().map(|r| r.srocr_iterations).sum();
    rec.penalty_solves = o.trace.records.iter().map(|r| r.penalty_solves).sum();
    rec.xi_trace = o.trace.xi_sequence();
    rec.harvested_trace = o.trace.records.iter().map(|r| r.total_harvested).collect();
    rec.design = Some(DesignRecord::new(&o.w, &o.v, &o.star));
    let mut rng = stream(d.seed, STREAM_AUDIT);
    match check_feasibility(&o.design(), &o.star, &sc.channels, &thr, spec.audit_samples, FeasibilityTolerances::default(), &mut rng) {
        Ok(rep) => {
            rec.ir_rates = rep.ir_rates.clone();
            rec.worst_eve_rate = finite(rep.worst_sampled_eve_rate);
            rec.min_beampattern = finite(rep.beampattern.iter().copied().fold(f64::INFINITY, f64::min));
            rec.power_used = Some(rep.power_used);
            rec.beta_residual = Some(rep.beta_residual);
            rec.audit_violations = Some(rep.total_violations());
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

/// Runs `f` on `0..n` with `workers` threads; results keep index order.
fn parallel_map<T: Send>(n: usize, workers: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let v = f(i);
                slots.lock().expect("no panics while holding the lock")[i] = Some(v);
            });
        }
    });
    slots.into_inner().expect("workers joined").into_iter().map(|v| v.expect("every index ran")).collect()
}

/// Every (trial, scheme, point) job, in record order.
pub fn run_experiment(spec: &ExperimentSpec) -> ExperimentOutput {
    let draws = parallel_map(spec.trials, spec.workers, |t| screen(spec, t));
    let redraws = draws.iter().map(|d| d.attempt).sum();
    let points = spec.points();
    let mut jobs = Vec::new();
    for (t, d) in draws.iter().enumerate() {
        for &scheme in &spec.schemes {
            for p in &points {
                jobs.push((t, d, scheme, *p));
            }
        }
    }
    let total = jobs.len();
    let done = AtomicUsize::new(0);
    let results = parallel_map(total, spec.workers, |i| {
        let (t, d, scheme, p) = &jobs[i];
        let start = Instant::now();
        let rec = run_job(spec, *t, d, *scheme, p);
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let k = done.fetch_add(1, Ordering::Relaxed) + 1;
        log::info!("[{k}/{total}] trial {t} {} {:?} rho {}: {} ({:.1} s)", scheme.label(), p.value, p.rho, rec.status, wall_ms / 1e3);
        let timing = Timing { trial: *t, scheme: *scheme, sweep_value: p.value, rho: p.rho, lambda_db: p.lambda_db, wall_ms };
        (rec, timing)
    });
    let (records, timings) = results.into_iter().unzip();
    ExperimentOutput { records, timings, redraws }
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).expect("records serialize"));
        s.push('\n');
    }
    s
}

pub fn from_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}
