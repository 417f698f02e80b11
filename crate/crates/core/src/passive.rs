//! Passive beamforming for a fixed transmit design: penalty method on the
//! rank gap `tr Q - lambda_max(Q)`, linearized at the current point.

use rand::Rng;
use serde::Serialize;

use nfstar_conic::{solve, Settings, SolveStatus};

use crate::active::{dominant_eigvec, eigen_ratio};
use crate::config::Side;
use crate::geometry::ChannelSet;
use crate::metrics::{SideCoefficients, StarCoefficients, Thresholds};
use crate::robust::{assemble_passive, AssemblyOptions, PassiveOptions, PassiveSolution, PenaltyTerm, RobustError, SideSelection};
use crate::{CMatrix, CVector, C64};

#[derive(Debug, thiserror::Error)]
pub enum PassiveError {
    #[error(transparent)]
    Robust(#[from] RobustError),
    #[error("solver input rejected: {0}")]
    Solver(String),
    #[error("passive subproblem infeasible: {0}")]
    Infeasible(String),
    #[error("passive subproblem failed: {0:?}: {1}")]
    Failed(SolveStatus, String),
    #[error("rank test failed: lambda2/lambda1 = {0:.3e}")]
    NotRankOne(f64),
}

/// `||Q||_* - ||Q||_2`, i.e. `tr Q - lambda_max(Q)` for PSD input.
pub fn rank_gap(q: &CMatrix) -> f64 {
    let (vals, _) = nfstar_conic::eigh_desc(q);
    let tr: f64 = vals.iter().sum();
    (tr - vals[0]).max(0.0)
}

/// Linearized gap `tr Q - (lambda_max(Q0) + kappa^H (Q - Q0) kappa)`, which
/// simplifies to `tr Q - kappa^H Q kappa`.
pub fn surrogate(q: &CMatrix, q0: &CMatrix) -> f64 {
    let kappa = dominant_eigvec(q0).1;
    surrogate_with(q, &kappa)
}

fn surrogate_with(q: &CMatrix, kappa: &CVector) -> f64 {
    q.trace().re - kappa.dotc(&(q * kappa)).re
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phi {
    pub phi: CVector,
    pub beta: Vec<f64>,
}

/// `phi = sqrt(lambda_max) kappa` with the first non-negligible entry real
/// and nonnegative, and `beta = diag(Q)`.
pub fn extract_phi(q: &CMatrix, max_ratio: f64) -> Result<Phi, PassiveError> {
    let ratio = eigen_ratio(q);
    if ratio > max_ratio {
        return Err(PassiveError::NotRankOne(ratio));
    }
    let (lmax, kappa) = dominant_eigvec(q);
    Ok(Phi { phi: kappa * C64::new(lmax.max(0.0).sqrt(), 0.0), beta: (0..q.nrows()).map(|i| q[(i, i)].re).collect() })
}

/// Unit-modulus-per-amplitude rounding: `phi_n <- sqrt(beta_n) phi_n / |phi_n|`.
pub fn round_to_amplitudes(phi: &CVector, beta: &[f64]) -> CVector {
    CVector::from_fn(phi.len(), |n, _| {
        let z = phi[n];
        let b = beta[n].clamp(0.0, 1.0).sqrt();
        if z.norm() > 1e-150 {
            z * C64::new(b / z.norm(), 0.0)
        } else {
            C64::new(b, 0.0)
        }
    })
}

/// Random phases on both sides with an equal energy split.
pub fn initial_surface<R: Rng + ?Sized>(n: usize, rng: &mut R) -> StarCoefficients {
    StarCoefficients::random_equal_split(n, rng)
}

/// Random phases; an element used by both sides splits its energy evenly,
/// an element used by one side gives it everything.
pub fn initial_selected_surface<R: Rng + ?Sized>(sel: &SideSelection, rng: &mut R) -> StarCoefficients {
    let mut phis = [CVector::zeros(sel.n), CVector::zeros(sel.n)];
    for e in 0..sel.n {
        let sides: Vec<Side> = Side::BOTH.into_iter().filter(|s| sel.get(*s).contains(&e)).collect();
        let amp = (1.0 / sides.len().max(1) as f64).sqrt();
        for s in sides {
            phis[s.index()][e] = C64::from_polar(amp, rng.random_range(0.0..std::f64::consts::TAU));
        }
    }
    let [t, r] = phis;
    StarCoefficients::new(SideCoefficients::from_phi(t), SideCoefficients::from_phi(r))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySettings {
    /// Initial penalty relative to the magnitude of the normalized objective.
    pub gamma0_rel: f64,
    /// Floor of the initial penalty.
    pub gamma0_min: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub max_outer: usize,
    /// Convex solves per penalty level.
    pub max_inner: usize,
    /// Relative change of the penalized objective that ends a level.
    pub inner_tol: f64,
}

impl Default for PenaltySettings {
    fn default() -> Self {
        Self { gamma0_rel: 0.01, gamma0_min: 1e-6, alpha: 10.0, sigma: 1e-7, max_outer: 30, max_inner: 2, inner_tol: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct PassiveConfig {
    pub selection: SideSelection,
    pub assembly: AssemblyOptions,
    pub solver: Settings,
}

impl PassiveConfig {
    pub fn energy_splitting(n: usize) -> Self {
        Self { selection: SideSelection::all(n), assembly: AssemblyOptions::default(), solver: Settings::default() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PenaltyRecord {
    pub outer: usize,
    pub inner: usize,
    pub gamma: f64,
    pub xi: f64,
    /// Normalized penalized objective.
    pub penalized: f64,
    pub surrogate_gap: f64,
    pub true_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyStatus {
    Converged,
    MaxIterations,
    /// A later solve failed; the last good iterate is returned.
    SolverFailure,
}

#[derive(Debug, Clone)]
pub struct PenaltyOutcome {
    pub solution: PassiveSolution,
    pub status: PenaltyStatus,
    pub trace: Vec<PenaltyRecord>,
    pub solves: usize,
    pub eigen_ratios: [f64; 2],
}

/// One convex solve with the penalty linearized at `kappa`.
pub fn solve_inner(
    channels: &ChannelSet,
    thr: &Thresholds,
    w: &[CMatrix],
    v: &CMatrix,
    penalty: Option<PenaltyTerm>,
    cfg: &PassiveConfig,
) -> Result<(PassiveSolution, f64), PassiveError> {
    let opts = PassiveOptions { selection: cfg.selection.clone(), penalty };
    let prog = assemble_passive(channels, thr, w, v, &opts, &cfg.assembly)?;
    let res = solve(&prog.program, &cfg.solver).map_err(|e| PassiveError::Solver(e.to_string()))?;
    match (&res.values, res.status) {
        (Some(vals), SolveStatus::Optimal) => Ok((prog.decode(vals), res.objective)),
        (_, SolveStatus::Infeasible) => Err(PassiveError::Infeasible(res.detail)),
        (_, st) => Err(PassiveError::Failed(st, res.detail)),
    }
}

/// Penalty loop from `init` (full `N x N` matrices per side). `xi_ref` sets
/// the scale of the initial penalty.
pub fn run_penalty(
    channels: &ChannelSet,
    thr: &Thresholds,
    w: &[CMatrix],
    v: &CMatrix,
    init: [&CMatrix; 2],
    xi_ref: f64,
    cfg: &PassiveConfig,
    settings: &PenaltySettings,
) -> Result<PenaltyOutcome, PassiveError> {
    let sel = &cfg.selection;
    let unit = crate::robust::Normalization::new(channels, thr).xi_unit;
    let mut gamma = (settings.gamma0_rel * (xi_ref / unit).abs()).max(settings.gamma0_min);
    let mut point = [sel.restrict(Side::T, init[0]), sel.restrict(Side::R, init[1])];
    let mut best: Option<PassiveSolution> = None;
    let mut trace = Vec::new();
    let mut solves = 0;
    let mut status = PenaltyStatus::MaxIterations;
    'outer: for outer in 0..settings.max_outer {
        let mut prev_obj: Option<f64> = None;
        let mut gap = f64::INFINITY;
        for inner in 0..settings.max_inner.max(1) {
            let kappa = [dominant_eigvec(&point[0]).1, dominant_eigvec(&point[1]).1];
            let term = PenaltyTerm { gamma, kappa: kappa.clone() };
            let (sol, obj) = match solve_inner(channels, thr, w, v, Some(term), cfg) {
                Ok(x) => x,
                Err(e) if best.is_none() => return Err(e),
                Err(e) => {
                    log::debug!("penalty solve failed at outer {outer}: {e}");
                    status = PenaltyStatus::SolverFailure;
                    break 'outer;
                }
            };
            solves += 1;
            gap = surrogate_with(&sol.q_sel[0], &kappa[0]) + surrogate_with(&sol.q_sel[1], &kappa[1]);
            trace.push(PenaltyRecord {
                outer,
                inner,
                gamma,
                xi: sol.xi,
                penalized: obj,
                surrogate_gap: gap,
                true_gap: rank_gap(&sol.q_sel[0]) + rank_gap(&sol.q_sel[1]),
            });
            point = sol.q_sel.clone();
            best = Some(sol);
            let settled = prev_obj.is_some_and(|p| (obj - p).abs() <= settings.inner_tol * (1.0 + p.abs()));
            prev_obj = Some(obj);
            if gap <= settings.sigma || settled {
                break;
            }
        }
        if gap <= settings.sigma {
            status = PenaltyStatus::Converged;
            break;
        }
        gamma *= settings.alpha;
    }
    let solution = best.expect("first solve either succeeded or returned");
    let eigen_ratios = [eigen_ratio(&solution.q_sel[0]), eigen_ratio(&solution.q_sel[1])];
    Ok(PenaltyOutcome { solution, status, trace, solves, eigen_ratios })
}
