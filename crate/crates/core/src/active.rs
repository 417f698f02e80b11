//! Active beamforming for a fixed surface: the rank-relaxed program and the
//! sequential rank-one constraint relaxation (SROCR) that drives every
//! `W_k` to rank one through eigenvector cuts `q^H W q >= u tr W`.

use serde::Serialize;

use nfstar_conic::{solve, Settings, SolveStatus};

use crate::geometry::ChannelSet;
use crate::metrics::Thresholds;
use crate::robust::{assemble_active, ActiveOptions, ActiveSolution, AssemblyOptions, RobustError, WParam};
use crate::{CMatrix, CVector, C64};

#[derive(Debug, thiserror::Error)]
pub enum ActiveError {
    #[error(transparent)]
    Robust(#[from] RobustError),
    #[error("solver input rejected: {0}")]
    Solver(String),
    #[error("active subproblem infeasible: {0}")]
    Infeasible(String),
    #[error("active subproblem failed: {0:?}: {1}")]
    Failed(SolveStatus, String),
    #[error("rank test failed: lambda2/lambda1 = {0:.3e}")]
    NotRankOne(f64),
}

/// Options shared by every active solve.
#[derive(Debug, Clone)]
pub struct ActiveConfig {
    /// Whether the sensing covariance `V` is optimized (otherwise zero).
    pub sensing: bool,
    pub assembly: AssemblyOptions,
    pub solver: Settings,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        Self { sensing: true, assembly: AssemblyOptions::default(), solver: Settings::default() }
    }
}

fn run_program(
    channels: &ChannelSet,
    thr: &Thresholds,
    q: [&CMatrix; 2],
    opts: &ActiveOptions,
    cfg: &ActiveConfig,
) -> Result<(SolveStatus, Option<ActiveSolution>, String), ActiveError> {
    let prog = assemble_active(channels, thr, q, opts, &cfg.assembly)?;
    let res = solve(&prog.program, &cfg.solver).map_err(|e| ActiveError::Solver(e.to_string()))?;
    let sol = res.values.as_ref().filter(|_| res.is_optimal()).map(|v| prog.decode(v));
    Ok((res.status, sol, res.detail))
}

/// Rank-relaxed active problem.
pub fn solve_relaxed(channels: &ChannelSet, thr: &Thresholds, q: [&CMatrix; 2], cfg: &ActiveConfig) -> Result<ActiveSolution, ActiveError> {
    let opts = ActiveOptions { sensing: cfg.sensing, ..ActiveOptions::relaxed(channels.k()) };
    let (status, sol, detail) = run_program(channels, thr, q, &opts, cfg)?;
    match (status, sol) {
        (_, Some(s)) => Ok(s),
        (SolveStatus::Infeasible, _) => Err(ActiveError::Infeasible(detail)),
        (st, _) => Err(ActiveError::Failed(st, detail)),
    }
}

/// Dominant eigenpair with a deterministic tie-break: among eigenvectors of
/// (numerically) equal top eigenvalue the one whose sorted magnitude pattern
/// is lexicographically largest wins; the phase makes the first
/// non-negligible entry real and nonnegative.
pub fn dominant_eigvec(w: &CMatrix) -> (f64, CVector) {
    let (vals, vecs) = nfstar_conic::eigh_desc(w);
    let top = vals[0];
    let tol = 1e-10 * top.abs().max(1e-300);
    let mut best = 0;
    let pattern = |i: usize| -> Vec<f64> { vecs.column(i).iter().map(|z| z.norm()).collect() };
    for i in 1..vals.len() {
        if (top - vals[i]).abs() > tol {
            break;
        }
        let (a, b) = (pattern(i), pattern(best));
        if a.iter().zip(&b).find(|(x, y)| (*x - *y).abs() > 1e-12).is_some_and(|(x, y)| x > y) {
            best = i;
        }
    }
    (top, normalize_phase(vecs.column(best).into_owned()))
}

fn normalize_phase(mut v: CVector) -> CVector {
    let scale = v.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    if let Some(z) = v.iter().find(|z| z.norm() > 1e-9 * scale).copied() {
        v *= z.conj() / C64::new(z.norm(), 0.0);
    }
    v
}

/// `lambda_max / tr`, in `(0, 1]` for nonzero PSD input.
pub fn rank_one_ratio(w: &CMatrix) -> f64 {
    let tr = w.trace().re;
    if tr <= 0.0 {
        return 1.0;
    }
    (dominant_eigvec(w).0 / tr).clamp(0.0, 1.0)
}

/// `lambda_2 / lambda_1` (0 for the zero matrix).
pub fn eigen_ratio(w: &CMatrix) -> f64 {
    let (vals, _) = nfstar_conic::eigh_desc(w);
    if vals.len() < 2 || vals[0] <= 0.0 {
        return 0.0;
    }
    vals[1].max(0.0) / vals[0]
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankOne {
    pub w: CVector,
    pub ratio: f64,
    /// `||w w^H - W||_F`
    pub residual: f64,
    /// `sqrt(lambda_2 tr W)`
    pub bound: f64,
}

/// `w = sqrt(lambda_max) q_max`, phase fixed as in [`dominant_eigvec`].
pub fn extract_rank_one(w: &CMatrix, max_ratio: f64) -> Result<RankOne, ActiveError> {
    let ratio = eigen_ratio(w);
    if ratio > max_ratio {
        return Err(ActiveError::NotRankOne(ratio));
    }
    let (lmax, q) = dominant_eigvec(w);
    let v = q * C64::new(lmax.max(0.0).sqrt(), 0.0);
    let (vals, _) = nfstar_conic::eigh_desc(w);
    let l2 = vals.get(1).copied().unwrap_or(0.0).max(0.0);
    let residual = (&v * v.adjoint() - w).norm();
    Ok(RankOne { w: v, ratio, residual, bound: (l2 * w.trace().re.max(0.0)).sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrocrSettings {
    pub u0: f64,
    pub upsilon0: f64,
    /// Stop tolerance on the change of the normalized objective.
    pub epsilon: f64,
    pub upsilon_min: f64,
    pub max_iter: usize,
}

impl Default for SrocrSettings {
    fn default() -> Self {
        Self { u0: 0.0, upsilon0: 0.1, epsilon: 1e-4, upsilon_min: 1e-8, max_iter: 60 }
    }
}

#[derive(Debug, Clone)]
pub struct SrocrState {
    pub iteration: usize,
    pub u: Vec<f64>,
    pub upsilon: Vec<f64>,
    pub q: Vec<CVector>,
    /// Last accepted design.
    pub design: ActiveSolution,
    pub epsilon: f64,
}

impl SrocrState {
    /// State after the relaxed solve: eigenvectors from `design`, `u` and
    /// `Upsilon` at their initial values.
    pub fn new(design: ActiveSolution, settings: &SrocrSettings) -> Self {
        let k = design.w.len();
        let q = design.w.iter().map(|w| dominant_eigvec(w).1).collect();
        Self { iteration: 0, u: vec![settings.u0; k], upsilon: vec![settings.upsilon0; k], q, design, epsilon: settings.epsilon }
    }

    fn refresh_u(&mut self) {
        for k in 0..self.u.len() {
            self.u[k] = (rank_one_ratio(&self.design.w[k]) + self.upsilon[k]).min(1.0);
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SrocrRecord {
    pub iteration: usize,
    pub u: Vec<f64>,
    pub upsilon: Vec<f64>,
    pub xi: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SrocrStatus {
    Converged,
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct SrocrOutcome {
    pub design: ActiveSolution,
    pub relaxed: ActiveSolution,
    pub status: SrocrStatus,
    pub trace: Vec<SrocrRecord>,
    /// Per-user `lambda_2 / lambda_1` of the returned design.
    pub eigen_ratios: Vec<f64>,
}

/// One cut-constrained solve with the current `u`, then the step-size and
/// `u` update. Returns whether the solve was feasible.
pub fn srocr_step(
    state: &mut SrocrState,
    channels: &ChannelSet,
    thr: &Thresholds,
    q: [&CMatrix; 2],
    cfg: &ActiveConfig,
) -> Result<bool, ActiveError> {
    let k = state.u.len();
    // At u = 1 the cut pins W_k to the ray through q_k, where the cut set
    // has no interior; that case is written as W_k = c q q^H directly.
    let w_param = (0..k).map(|j| if state.u[j] >= 1.0 { WParam::Ray(state.q[j].clone()) } else { WParam::Full }).collect();
    let cuts = (0..k).map(|j| (state.u[j] < 1.0 && state.u[j] > 0.0).then(|| (state.q[j].clone(), state.u[j]))).collect();
    let opts = ActiveOptions { w_param, sensing: cfg.sensing, cuts };
    let (status, sol, detail) = run_program(channels, thr, q, &opts, cfg)?;
    state.iteration += 1;
    let feasible = match (status, sol) {
        (_, Some(s)) => {
            state.q = s.w.iter().map(|w| dominant_eigvec(w).1).collect();
            state.design = s;
            true
        }
        (SolveStatus::Infeasible | SolveStatus::MaxIterations | SolveStatus::NumericalFailure, None) => {
            log::debug!("srocr step {} rejected: {status:?} {detail}", state.iteration);
            for u in state.upsilon.iter_mut() {
                *u *= 0.5;
            }
            false
        }
        (st, None) => return Err(ActiveError::Failed(st, detail)),
    };
    state.refresh_u();
    Ok(feasible)
}

/// Relaxed solve followed by SROCR steps until every `u_k = 1` and the
/// normalized objective moves by at most `epsilon`.
pub fn run_srocr(
    channels: &ChannelSet,
    thr: &Thresholds,
    q: [&CMatrix; 2],
    cfg: &ActiveConfig,
    settings: &SrocrSettings,
) -> Result<SrocrOutcome, ActiveError> {
    let relaxed = solve_relaxed(channels, thr, q, cfg)?;
    let unit = crate::robust::Normalization::new(channels, thr).xi_unit;
    let mut state = SrocrState::new(relaxed.clone(), settings);
    let mut trace = vec![SrocrRecord { iteration: 0, u: state.u.clone(), upsilon: state.upsilon.clone(), xi: relaxed.xi, feasible: true }];
    state.refresh_u();
    let mut prev_xi = relaxed.xi;
    let mut status = SrocrStatus::MaxIterations;
    // The final design must come from a step taken with every u_k = 1.
    let mut pinned = false;
    for _ in 0..settings.max_iter {
        let all_one = state.u.iter().all(|&u| u >= 1.0);
        let feasible = srocr_step(&mut state, channels, thr, q, cfg)?;
        trace.push(SrocrRecord {
            iteration: state.iteration,
            u: state.u.clone(),
            upsilon: state.upsilon.clone(),
            xi: state.design.xi,
            feasible,
        });
        if feasible {
            let change = (state.design.xi - prev_xi).abs() / unit;
            prev_xi = state.design.xi;
            pinned = all_one;
            if all_one && change <= settings.epsilon {
                status = SrocrStatus::Converged;
                break;
            }
        } else if state.upsilon.iter().any(|&u| u < settings.upsilon_min) {
            status = SrocrStatus::Stalled;
            break;
        }
    }
    let mut design = state.design;
    if !pinned {
        // Best effort: the last accepted design was not pinned to rank one.
        log::debug!("srocr ended {status:?} without a rank-one step");
    }
    for w in design.w.iter_mut() {
        nfstar_conic::hermitize(w);
    }
    let eigen_ratios = design.w.iter().map(eigen_ratio).collect();
    Ok(SrocrOutcome { design, relaxed, status, trace, eigen_ratios })
}
