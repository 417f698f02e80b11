//! Alternating optimization: active step at a fixed surface, passive step
//! at a fixed transmit design, until the worst-case harvested power stops
//! improving. Also hosts the comparison schemes.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use nfstar_conic::Settings;

use crate::active::{eigen_ratio, extract_rank_one, run_srocr, solve_relaxed, ActiveConfig, ActiveError, SrocrSettings, SrocrStatus};
use crate::config::Side;
use crate::geometry::{ChannelSet, GeometryError, Scenario};
use crate::metrics::{self, SideCoefficients, StarCoefficients, Thresholds, TransmitDesign};
use crate::passive::{
    initial_selected_surface, initial_surface, rank_gap, round_to_amplitudes, run_penalty, PassiveConfig, PassiveError,
    PenaltySettings, PenaltyStatus,
};
use crate::robust::{worst_case_margins, worst_case_xi, AssemblyOptions, RobustError, SideSelection};
use crate::{CMatrix, CVector, C64};

#[derive(Debug, thiserror::Error)]
pub enum AoError {
    #[error("scenario infeasible at the initial surface: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Active(#[from] ActiveError),
    #[error(transparent)]
    Passive(#[from] PassiveError),
    #[error(transparent)]
    Robust(#[from] RobustError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Proposed,
    FarFieldOnly,
    Cris,
    Sdr,
    NoSensing,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] =
        [BaselineKind::Proposed, BaselineKind::FarFieldOnly, BaselineKind::Cris, BaselineKind::Sdr, BaselineKind::NoSensing];

    pub fn label(self) -> &'static str {
        match self {
            BaselineKind::Proposed => "proposed",
            BaselineKind::FarFieldOnly => "far_field_only",
            BaselineKind::Cris => "cris",
            BaselineKind::Sdr => "sdr",
            BaselineKind::NoSensing => "no_sensing",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "far_field" => Some(BaselineKind::FarFieldOnly),
            _ => Self::ALL.into_iter().find(|k| k.label() == s),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AoConfig {
    /// Relative gain below which the loop stops.
    pub delta0: f64,
    pub r_max: usize,
    pub srocr: SrocrSettings,
    pub penalty: PenaltySettings,
    pub solver: Settings,
    pub assembly: AssemblyOptions,
    /// Worst-case margin (relative to each constraint's scale) below which
    /// a rounded surface is rejected.
    pub accept_tol: f64,
    /// Allowed relative drop of the objective when accepting a step.
    pub monotone_slack: f64,
    pub sdr_candidates: usize,
    pub seed: u64,
}

impl Default for AoConfig {
    fn default() -> Self {
        Self {
            delta0: 1e-3,
            r_max: 15,
            srocr: SrocrSettings::default(),
            penalty: PenaltySettings::default(),
            solver: Settings::default(),
            assembly: AssemblyOptions::default(),
            accept_tol: 1e-7,
            monotone_slack: 1e-6,
            sdr_candidates: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Worst-case per-ER harvested power of the current design (W).
    pub xi: f64,
    pub harvested: Vec<f64>,
    pub total_harvested: f64,
    pub ir_rates: Vec<f64>,
    pub eve_rates: Vec<Vec<f64>>,
    pub beampattern: Vec<f64>,
    /// `tr W_k - lambda_max(W_k)` of the active output.
    pub w_rank_gaps: Vec<f64>,
    /// True rank gaps of the passive output before rounding.
    pub q_rank_gaps: [f64; 2],
    pub q_eigen_ratios: [f64; 2],
    pub srocr_iterations: usize,
    pub penalty_solves: usize,
    pub srocr_status: SrocrStatus,
    pub penalty_status: Option<PenaltyStatus>,
    pub surface_accepted: bool,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
}

impl RunTrace {
    pub fn xi_sequence(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.xi).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AoStatus {
    Converged,
    MaxIterations,
    /// A later solve failed; the best feasible iterate is returned.
    SolverFailure,
}

#[derive(Debug, Clone)]
pub struct AoOutcome {
    pub w: Vec<CVector>,
    pub v: CMatrix,
    pub star: StarCoefficients,
    /// Worst-case per-ER harvested power of the returned pair.
    pub xi: f64,
    pub status: AoStatus,
    pub trace: RunTrace,
    /// `lambda_2 / lambda_1` of the last active output, per IR.
    pub w_eigen_ratios: Vec<f64>,
    /// `lambda_2 / lambda_1` of the last penalty output, per side.
    pub q_eigen_ratios: [f64; 2],
}

impl AoOutcome {
    pub fn converged(&self) -> bool {
        self.status == AoStatus::Converged
    }

    pub fn design(&self) -> TransmitDesign {
        TransmitDesign::from_vectors(self.w.clone(), self.v.clone())
    }

    pub fn lifted(&self) -> Vec<CMatrix> {
        self.w.iter().map(|w| w * w.adjoint()).collect()
    }
}

/// How the active step turns the surface into a transmit design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ActiveMode {
    Srocr,
    Randomized,
}

struct Variant {
    active: ActiveConfig,
    passive: PassiveConfig,
    mode: ActiveMode,
}

struct ActiveStep {
    w: Vec<CVector>,
    v: CMatrix,
    xi: f64,
    iterations: usize,
    status: SrocrStatus,
    eigen_ratios: Vec<f64>,
}

fn lift(w: &[CVector]) -> Vec<CMatrix> {
    w.iter().map(|x| x * x.adjoint()).collect()
}

fn q_pair(star: &StarCoefficients) -> [CMatrix; 2] {
    [star.t.q.clone(), star.r.q.clone()]
}

fn robust_ok(w: &[CMatrix], v: &CMatrix, q: [&CMatrix; 2], xi: f64, ch: &ChannelSet, thr: &Thresholds, tol: f64) -> Result<bool, RobustError> {
    Ok(worst_case_margins(w, v, q, xi, ch, thr)?.iter().all(|(_, m)| *m >= -tol))
}

fn active_step(
    ch: &ChannelSet,
    thr: &Thresholds,
    q: [&CMatrix; 2],
    variant: &Variant,
    cfg: &AoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ActiveStep, AoError> {
    match variant.mode {
        ActiveMode::Srocr => {
            let out = run_srocr(ch, thr, q, &variant.active, &cfg.srocr)?;
            let w = out
                .design
                .w
                .iter()
                .map(|wk| extract_rank_one(wk, 1.0).map(|r| r.w))
                .collect::<Result<Vec<_>, _>>()?;
            let xi = worst_case_xi(&lift(&w), &out.design.v, q, ch, thr)?;
            Ok(ActiveStep {
                w,
                v: out.design.v,
                xi,
                iterations: out.trace.len(),
                status: out.status,
                eigen_ratios: out.eigen_ratios,
            })
        }
        ActiveMode::Randomized => {
            let relaxed = solve_relaxed(ch, thr, q, &variant.active)?;
            let ratios = relaxed.w.iter().map(eigen_ratio).collect();
            let (w, xi) = gaussian_randomization(&relaxed.w, &relaxed.v, q, ch, thr, cfg, rng)?
                .ok_or_else(|| AoError::Infeasible("no randomized candidate is robustly feasible".into()))?;
            Ok(ActiveStep { w, v: relaxed.v, xi, iterations: 1, status: SrocrStatus::Converged, eigen_ratios: ratios })
        }
    }
}

/// Draws `w_k = U_k L_k^{1/2} r` with `r ~ CN(0, I)` (the first candidate
/// takes `r = e_1`, the principal eigenvector), scales each beam to the
/// relaxed power `tr W_k`, and keeps the robustly feasible candidate with
/// the largest worst-case harvested power.
pub fn gaussian_randomization(
    w: &[CMatrix],
    v: &CMatrix,
    q: [&CMatrix; 2],
    ch: &ChannelSet,
    thr: &Thresholds,
    cfg: &AoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Option<(Vec<CVector>, f64)>, RobustError> {
    let factors: Vec<(CMatrix, f64)> = w
        .iter()
        .map(|wk| {
            let (vals, vecs) = nfstar_conic::eigh_desc(wk);
            let mut f = vecs.clone();
            for (j, l) in vals.iter().enumerate() {
                f.column_mut(j).scale_mut(l.max(0.0).sqrt());
            }
            (f, wk.trace().re.max(0.0))
        })
        .collect();
    let mut best: Option<(Vec<CVector>, f64)> = None;
    for i in 0..cfg.sdr_candidates {
        let cand: Vec<CVector> = factors
            .iter()
            .map(|(f, p)| {
                // Candidate 0 is the principal eigenvector itself.
                let r = if i == 0 {
                    CVector::from_fn(f.ncols(), |j, _| if j == 0 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
                } else {
                    CVector::from_fn(f.ncols(), |_, _| {
                        let (a, b): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
                        C64::new(a, b) * std::f64::consts::FRAC_1_SQRT_2
                    })
                };
                let x = f * r;
                let n2 = x.norm_squared();
                if n2 > 0.0 {
                    x * C64::new((p / n2).sqrt(), 0.0)
                } else {
                    x
                }
            })
            .collect();
        let lifted = lift(&cand);
        let xi = worst_case_xi(&lifted, v, q, ch, thr)?;
        if best.as_ref().is_some_and(|(_, b)| *b >= xi) {
            continue;
        }
        if robust_ok(&lifted, v, q, xi, ch, thr, cfg.accept_tol)? {
            best = Some((cand, xi));
        }
    }
    Ok(best)
}

fn record(
    iteration: usize,
    step: &ActiveStep,
    star: &StarCoefficients,
    ch: &ChannelSet,
    thr: &Thresholds,
) -> Result<IterationRecord, AoError> {
    let design = TransmitDesign::from_vectors(step.w.clone(), step.v.clone());
    let m = |r: Result<f64, metrics::MetricsError>| r.unwrap_or(f64::NAN);
    let harvested: Vec<f64> = (0..ch.e()).map(|e| m(metrics::harvested_power(e, &design, star, ch, thr))).collect();
    Ok(IterationRecord {
        iteration,
        xi: step.xi,
        total_harvested: harvested.iter().sum(),
        harvested,
        ir_rates: (0..ch.k()).map(|k| m(metrics::ir_rate(k, &design, star, ch, thr))).collect(),
        eve_rates: (0..ch.e()).map(|e| (0..ch.k()).map(|k| m(metrics::eve_rate(e, k, &design, star, ch, thr))).collect()).collect(),
        beampattern: (0..ch.t()).map(|t| m(metrics::beampattern_gain(t, &design, star, ch))).collect(),
        w_rank_gaps: lift(&step.w).iter().map(rank_gap).collect(),
        q_rank_gaps: [0.0; 2],
        q_eigen_ratios: [0.0; 2],
        srocr_iterations: step.iterations,
        penalty_solves: 0,
        srocr_status: step.status,
        penalty_status: None,
        surface_accepted: false,
        wall_ms: 0.0,
    })
}

fn run_variant(ch: &ChannelSet, thr: &Thresholds, init: &StarCoefficients, variant: &Variant, cfg: &AoConfig) -> Result<AoOutcome, AoError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut star = init.clone();
    let mut trace = RunTrace::default();
    // Current robustly feasible pair: transmit design and the surface it
    // was computed for.
    let mut best: Option<(ActiveStep, StarCoefficients)> = None;
    let mut q_ratios = [f64::NAN; 2];
    let mut status = AoStatus::MaxIterations;
    for r in 1..=cfg.r_max.max(1) {
        let t0 = Instant::now();
        let q = q_pair(&star);
        let step = match active_step(ch, thr, [&q[0], &q[1]], variant, cfg, &mut rng) {
            Ok(s) => s,
            Err(e) if best.is_none() => {
                return Err(match e {
                    AoError::Active(ActiveError::Infeasible(d)) => AoError::Infeasible(d),
                    other => other,
                })
            }
            Err(e) => {
                log::debug!("active step failed at iteration {r}: {e}");
                status = AoStatus::SolverFailure;
                break;
            }
        };
        let prev_xi = best.as_ref().map(|(s, _)| s.xi);
        if let Some(p) = prev_xi {
            if step.xi < p - cfg.monotone_slack * p.abs() {
                // The previous pair stays; the surface moved in a direction
                // that lost more than the tolerated slack.
                log::debug!("active step lowered xi from {p:e} to {:e}", step.xi);
                status = AoStatus::Converged;
                break;
            }
        }
        let mut rec = record(r, &step, &star, ch, thr)?;
        let gain = prev_xi.map(|p| (step.xi - p) / p.abs().max(1e-300));
        best = Some((step, star.clone()));
        let (step, _) = best.as_ref().unwrap();

        // Passive step at the fresh design.
        let lifted = lift(&step.w);
        match run_penalty(ch, thr, &lifted, &step.v, [&q[0], &q[1]], step.xi, &variant.passive, &cfg.penalty) {
            Ok(out) => {
                q_ratios = out.eigen_ratios;
                rec.q_rank_gaps = [rank_gap(&out.solution.q_sel[0]), rank_gap(&out.solution.q_sel[1])];
                rec.q_eigen_ratios = out.eigen_ratios;
                rec.penalty_solves = out.solves;
                rec.penalty_status = Some(out.status);
                let candidate = round_surface(&out.solution.q, &variant.passive.selection);
                let cq = q_pair(&candidate);
                let xi_new = worst_case_xi(&lifted, &step.v, [&cq[0], &cq[1]], ch, thr)?;
                let ok = robust_ok(&lifted, &step.v, [&cq[0], &cq[1]], xi_new, ch, thr, cfg.accept_tol)?;
                if ok && xi_new >= step.xi - cfg.monotone_slack * step.xi.abs() {
                    star = candidate;
                    rec.surface_accepted = true;
                }
            }
            Err(e) => log::debug!("passive step failed at iteration {r}: {e}"),
        }
        rec.wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        let accepted = rec.surface_accepted;
        trace.records.push(rec);
        if gain.is_some_and(|g| g < cfg.delta0) || !accepted {
            status = AoStatus::Converged;
            break;
        }
    }
    let (step, pair_star) = best.expect("first active step succeeded");
    Ok(AoOutcome { xi: step.xi, w_eigen_ratios: step.eigen_ratios, w: step.w, v: step.v, star: pair_star, status, trace, q_eigen_ratios: q_ratios })
}

/// `phi_n <- sqrt(beta_n) phi_n / |phi_n|` on the dominant eigenvector of
/// each side, with `beta = diag(Q)` (renormalized to sum to one per
/// element where both sides are used).
pub fn round_surface(q: &[CMatrix; 2], sel: &SideSelection) -> StarCoefficients {
    let n = sel.n;
    let mut beta = [vec![0.0; n], vec![0.0; n]];
    for e in 0..n {
        let (bt, br) = (q[0][(e, e)].re.max(0.0), q[1][(e, e)].re.max(0.0));
        let used_t = sel.t.contains(&e);
        let used_r = sel.r.contains(&e);
        let s = bt * f64::from(used_t as u8) + br * f64::from(used_r as u8);
        match (used_t, used_r) {
            (true, true) if s > 0.0 => {
                beta[0][e] = bt / s;
                beta[1][e] = br / s;
            }
            (true, true) => {
                beta[0][e] = 0.5;
                beta[1][e] = 0.5;
            }
            (true, false) => beta[0][e] = 1.0,
            (false, true) => beta[1][e] = 1.0,
            (false, false) => {}
        }
    }
    let side = |i: usize| {
        let (_, kappa) = crate::active::dominant_eigvec(&q[i]);
        SideCoefficients::from_phi(round_to_amplitudes(&kappa, &beta[i]))
    };
    StarCoefficients::new(side(Side::T.index()), side(Side::R.index()))
}

/// Proposed scheme from a given initial surface.
pub fn run_ao(ch: &ChannelSet, thr: &Thresholds, init: &StarCoefficients, cfg: &AoConfig) -> Result<AoOutcome, AoError> {
    let variant = Variant {
        active: ActiveConfig { sensing: true, assembly: cfg.assembly, solver: cfg.solver.clone() },
        passive: PassiveConfig { selection: SideSelection::all(ch.n()), assembly: cfg.assembly, solver: cfg.solver.clone() },
        mode: ActiveMode::Srocr,
    };
    run_variant(ch, thr, init, &variant, cfg)
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub kind: BaselineKind,
    pub outcome: AoOutcome,
    /// Worst-case harvested power on the true channel estimates (differs
    /// from `outcome.xi` only for the far-field scheme).
    pub xi: f64,
    pub total_harvested: f64,
    /// Whether the design meets every robust constraint on the true
    /// channels.
    pub feasible: bool,
}

/// Random initial surface matching the scheme's element usage.
pub fn initial_surface_for<R: rand::Rng + ?Sized>(kind: BaselineKind, n: usize, rng: &mut R) -> StarCoefficients {
    match kind {
        BaselineKind::Cris => initial_selected_surface(&SideSelection::alternating(n), rng),
        _ => initial_surface(n, rng),
    }
}

/// Runs one scheme on a scenario from the given initial surface. The
/// far-field scheme designs on planar-wave channels and is then judged on
/// the true ones.
pub fn run_baseline(
    kind: BaselineKind,
    scenario: &Scenario,
    thr: &Thresholds,
    init: &StarCoefficients,
    cfg: &AoConfig,
) -> Result<BaselineOutcome, AoError> {
    let ch = &scenario.channels;
    let n = ch.n();
    let base_active = ActiveConfig { sensing: true, assembly: cfg.assembly, solver: cfg.solver.clone() };
    let es = PassiveConfig { selection: SideSelection::all(n), assembly: cfg.assembly, solver: cfg.solver.clone() };
    let (design_ch, variant) = match kind {
        BaselineKind::Proposed => (None, Variant { active: base_active, passive: es, mode: ActiveMode::Srocr }),
        BaselineKind::FarFieldOnly => {
            let rho = ch.delta_ir.first().zip(ch.h_hat.first()).map_or(0.0, |(d, h)| d / h.norm().max(1e-300));
            (Some(scenario.farfield_channels(rho)?), Variant { active: base_active, passive: es, mode: ActiveMode::Srocr })
        }
        BaselineKind::Cris => (
            None,
            Variant {
                active: base_active,
                passive: PassiveConfig { selection: SideSelection::alternating(n), ..es },
                mode: ActiveMode::Srocr,
            },
        ),
        BaselineKind::Sdr => (None, Variant { active: base_active, passive: es, mode: ActiveMode::Randomized }),
        BaselineKind::NoSensing => {
            (None, Variant { active: ActiveConfig { sensing: false, ..base_active }, passive: es, mode: ActiveMode::Srocr })
        }
    };
    let used = design_ch.as_ref().unwrap_or(ch);
    let outcome = run_variant(used, thr, init, &variant, cfg)?;
    let lifted = outcome.lifted();
    let q = q_pair(&outcome.star);
    let (xi, feasible) = if design_ch.is_some() {
        let xi = worst_case_xi(&lifted, &outcome.v, [&q[0], &q[1]], ch, thr)?;
        // Judged against the xi the design promised.
        let ok = robust_ok(&lifted, &outcome.v, [&q[0], &q[1]], outcome.xi.min(xi), ch, thr, cfg.accept_tol)?;
        (xi, ok)
    } else {
        (outcome.xi, true)
    };
    let design = outcome.design();
    let total_harvested =
        (0..ch.e()).map(|e| metrics::harvested_power(e, &design, &outcome.star, ch, thr).unwrap_or(f64::NAN)).sum();
    Ok(BaselineOutcome { kind, outcome, xi, total_harvested, feasible })
}

#[derive(Debug, Clone, Serialize)]
pub struct ComplexityReport {
    pub outer_iterations: usize,
    pub srocr_iterations: usize,
    pub penalty_solves: usize,
    /// `(K + E + T)((MN)^3.5 + M^3.5)`
    pub per_solve_order: f64,
    /// `(I_SR + I_in) * per_solve_order`
    pub total_order: f64,
}

pub fn per_solve_order(m: usize, n: usize, k: usize, e: usize, t: usize) -> f64 {
    let (m, n) = (m as f64, n as f64);
    (k + e + t) as f64 * ((m * n).powf(3.5) + m.powf(3.5))
}

pub fn complexity_report(trace: &RunTrace, m: usize, n: usize, k: usize, e: usize, t: usize) -> ComplexityReport {
    let outer = trace.records.len();
    let sr: usize = trace.records.iter().map(|r| r.srocr_iterations).sum();
    let inn: usize = trace.records.iter().map(|r| r.penalty_solves).sum();
    let per = per_solve_order(m, n, k, e, t);
    ComplexityReport { outer_iterations: outer, srocr_iterations: sr, penalty_solves: inn, per_solve_order: per, total_order: (sr + inn) as f64 * per }
}
