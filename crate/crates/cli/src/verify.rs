//! Property suite behind the `verify` subcommand.

use nfstar_conic::{ConicProgram, LinearExpr, MatrixVar, Relation, Settings, Sign};
use nfstar_core::active::{solve_relaxed, ActiveConfig, ActiveError};
use nfstar_core::ao::{run_ao, AoConfig, AoOutcome, BaselineKind};
use nfstar_core::config::SystemConfig;
use nfstar_core::geometry::{ChannelSet, Scenario};
use nfstar_core::metrics::{link_powers, SideCoefficients, Thresholds, TransmitDesign};
use nfstar_core::passive::{rank_gap, surrogate};
use nfstar_core::robust::{kron_quadratic_form, verify_design, AssemblyOptions, LmiKind, Mutation, ZeroRadius};
use nfstar_core::{CMatrix, CVector, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::runner::{draw, draw_seed};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Base scenario; `rho` of the robust checks is taken from here.
    pub system: SystemConfig,
    pub seed_base: u64,
    /// Scenario draws per scenario-level check.
    pub scenarios: usize,
    /// Perturbations per LMI family in the sampling oracles.
    pub samples: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { system: SystemConfig::desk(), seed_base: 0, scenarios: 5, samples: 10_000 }
    }
}

fn cmat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    CMatrix::from_fn(r, c, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn psd(n: usize, rank: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let a = cmat(n, rank, rng);
    &a * a.adjoint()
}

/// `vec(A)^H (D^T (x) B) vec(C)` against `tr(A^H B C D)`.
pub fn kron_identity(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let (n, m) = (2 + i % 4, 2 + i % 3);
        let (a, b, c, d) = (cmat(n, m, &mut rng), cmat(n, n, &mut rng), cmat(n, m, &mut rng), cmat(m, m, &mut rng));
        let want = (a.adjoint() * &b * &c * &d).trace();
        let got = match kron_quadratic_form(&a, &b, &c, &d) {
            Ok(v) => v,
            Err(e) => return Check::new("kron_identity", false, e.to_string()),
        };
        worst = worst.max((got - want).norm() / want.norm().max(1e-300));
    }
    Check::new("kron_identity", worst <= 1e-12, format!("{instances} instances, worst relative error {worst:.2e}"))
}

/// The real embedding of a Hermitian matrix has each eigenvalue twice.
pub fn hermitian_embedding(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let n = 2 + i % 5;
        let a = cmat(n, n, &mut rng);
        let h = (&a + a.adjoint()) * C64::new(0.5, 0.0);
        let emb = match nfstar_conic::embed_hermitian(&h) {
            Ok(e) => e,
            Err(e) => return Check::new("hermitian_embedding", false, e.to_string()),
        };
        let mut want: Vec<f64> = nfstar_conic::eigenvalues(&h).into_iter().flat_map(|v| [v, v]).collect();
        let mut got = nfstar_conic::eigenvalues(&emb);
        want.sort_by(f64::total_cmp);
        got.sort_by(f64::total_cmp);
        let scale = want.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let err = want.iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
        worst = worst.max(err);
    }
    Check::new("hermitian_embedding", worst <= 1e-10, format!("{instances} instances, worst relative error {worst:.2e}"))
}

/// Nuclear minus spectral norm of a PSD matrix is its tail eigenvalue sum.
pub fn rank_gap_tail(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let n = 2 + i % 6;
        let q = psd(n, 1 + i % n, &mut rng);
        let vals = nfstar_conic::eigh_desc(&q).0;
        let tail: f64 = vals[1..].iter().sum();
        worst = worst.max((rank_gap(&q) - tail).abs() / q.trace().re);
    }
    Check::new("rank_gap_tail", worst <= 1e-10, format!("{instances} instances, worst relative error {worst:.2e}"))
}

/// The linearized rank gap never undershoots the true gap.
pub fn surrogate_majorization(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for i in 0..instances {
        let n = 2 + i % 5;
        let q0 = psd(n, 1 + i % n, &mut rng);
        let q = psd(n, 1 + (i / 2) % n, &mut rng);
        worst = worst.min((surrogate(&q, &q0) - rank_gap(&q)) / q.trace().re);
    }
    Check::new("surrogate_majorization", worst >= -1e-10, format!("{instances} instances, smallest relative slack {worst:.2e}"))
}

/// Vector and lifted evaluations of every link power agree.
pub fn lifted_vector_equivalence(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let (n, m, k) = (2 + i % 4, 2 + i % 3, 1 + i % 3);
        let h = cmat(n, m, &mut rng);
        let phi = CVector::from_fn(n, |_, _| C64::from_polar(rng.random_range(0.0..1.0), rng.random_range(0.0..6.3)));
        let side = SideCoefficients::from_phi(phi);
        let w: Vec<CVector> = (0..k).map(|_| cmat(m, 1, &mut rng).column(0).into()).collect();
        let v = psd(m, 2, &mut rng);
        let vec_design = TransmitDesign::from_vectors(w.clone(), v.clone());
        let lifted = TransmitDesign::from_lifted(w.iter().map(|x| x * x.adjoint()).collect(), v);
        let (a, b) = match (link_powers(&h, &side, &vec_design), link_powers(&h, &side, &lifted)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return Check::new("lifted_vector_equivalence", false, "dimension error".into()),
        };
        let scale = a.total().max(1e-300);
        for (x, y) in a.beams.iter().chain([&a.sensing]).zip(b.beams.iter().chain([&b.sensing])) {
            worst = worst.max((x - y).abs() / scale);
        }
    }
    Check::new("lifted_vector_equivalence", worst <= 1e-10, format!("{instances} instances, worst relative error {worst:.2e}"))
}

/// Solved robust design on one scenario draw.
pub struct RobustDesign {
    pub seed: u64,
    pub scenario: Scenario,
    pub thresholds: Thresholds,
    pub outcome: AoOutcome,
}

/// Proposed-scheme designs on the first `opts.scenarios` draws for which
/// the loop produces one (draws are tried in seed order, at most four
/// times as many as requested).
pub fn robust_designs(opts: &VerifyOptions) -> Vec<RobustDesign> {
    let thr = Thresholds::from_config(&opts.system);
    let mut out = Vec::new();
    for i in 0..4 * opts.scenarios {
        if out.len() == opts.scenarios {
            break;
        }
        let seed = draw_seed(opts.seed_base, i, 0);
        let Ok((scenario, init)) = draw(&opts.system, seed, BaselineKind::Proposed) else { continue };
        let cfg = AoConfig { seed, ..AoConfig::default() };
        match run_ao(&scenario.channels, &thr, &init, &cfg) {
            Ok(outcome) => out.push(RobustDesign { seed, scenario, thresholds: thr.clone(), outcome }),
            Err(e) => log::info!("draw {seed}: {e}"),
        }
    }
    out
}

/// Every converged design holds each LMI family on `samples` sampled
/// channel errors (plus the exact and first-order worst cases).
pub fn s_procedure_soundness(designs: &[RobustDesign], samples: usize) -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    let mut converged = 0;
    for d in designs {
        if !d.outcome.converged() {
            lines.push(format!("seed {}: {:?}, skipped", d.seed, d.outcome.status));
            continue;
        }
        converged += 1;
        let o = &d.outcome;
        let mut rng = ChaCha8Rng::seed_from_u64(d.seed ^ 0x5eed);
        let reports = match verify_design(&o.lifted(), &o.v, [&o.star.t.q, &o.star.r.q], o.xi, &d.scenario.channels, &d.thresholds, samples, 1e-6, &mut rng) {
            Ok(r) => r,
            Err(e) => {
                ok = false;
                lines.push(format!("seed {}: {e}", d.seed));
                continue;
            }
        };
        let mut per_kind = [0usize; 4];
        for (f, r) in &reports {
            let slot = match f.kind {
                LmiKind::Ir => 0,
                LmiKind::Energy => 1,
                LmiKind::Eve => 2,
                LmiKind::Sensing => 3,
            };
            per_kind[slot] += r.violations;
        }
        ok &= per_kind.iter().all(|&v| v == 0);
        lines.push(format!("seed {}: {} families, violations ir/energy/eve/sensing {:?}", d.seed, reports.len(), per_kind));
    }
    ok &= converged > 0;
    Check::new("s_procedure_soundness", ok, format!("{converged} converged designs; {}", lines.join("; ")))
}

/// Power budget and per-element energy conservation of every design.
pub fn conservation_audit(designs: &[RobustDesign]) -> Check {
    let mut worst_power = f64::NEG_INFINITY;
    let mut worst_beta = 0.0f64;
    for d in designs {
        let used: f64 = d.outcome.w.iter().map(|w| w.norm_squared()).sum::<f64>() + d.outcome.v.trace().re;
        worst_power = worst_power.max(used / d.thresholds.p_max - 1.0);
        worst_beta = worst_beta.max(d.outcome.star.beta_residual());
    }
    let ok = !designs.is_empty() && worst_power <= 1e-6 && worst_beta <= 1e-6;
    Check::new(
        "conservation_audit",
        ok,
        format!("{} designs, largest relative power excess {worst_power:.2e}, largest beta residual {worst_beta:.2e}", designs.len()),
    )
}

fn eve_violations(ch: &ChannelSet, thr: &Thresholds, q: [&CMatrix; 2], w: &[CMatrix], v: &CMatrix, xi: f64, samples: usize, seed: u64) -> Option<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reps = verify_design(w, v, q, xi, ch, thr, samples, 1e-6, &mut rng).ok()?;
    Some(reps.iter().filter(|(f, _)| f.kind == LmiKind::Eve).map(|(_, r)| r.violations).sum())
}

/// Negative control: flipping the sign of the radius term in every Eve
/// block must produce a design the sampling oracle rejects, while the
/// honest program's design on the same draw passes.
pub fn mutation_control(opts: &VerifyOptions, samples: usize) -> Check {
    let thr = Thresholds::from_config(&opts.system);
    for i in 0..20 {
        let seed = draw_seed(opts.seed_base, i, 0);
        let Ok((sc, init)) = draw(&opts.system, seed, BaselineKind::Proposed) else { continue };
        let q = [&init.t.q, &init.r.q];
        let honest_cfg = ActiveConfig::default();
        let mut bad_cfg = ActiveConfig::default();
        bad_cfg.assembly.mutation = Some(Mutation::EveCornerSignFlip);
        let (Ok(h), Ok(m)) = (solve_relaxed(&sc.channels, &thr, q, &honest_cfg), solve_relaxed(&sc.channels, &thr, q, &bad_cfg)) else {
            continue;
        };
        let hv = eve_violations(&sc.channels, &thr, q, &h.w, &h.v, h.xi, samples, seed);
        let mv = eve_violations(&sc.channels, &thr, q, &m.w, &m.v, m.xi, samples, seed);
        let ok = hv == Some(0) && mv.is_some_and(|v| v > 0);
        return Check::new(
            "mutation_control",
            ok,
            format!("draw {seed}: honest eve violations {hv:?}, mutated eve violations {mv:?} (xi {:.3e} vs {:.3e})", h.xi, m.xi),
        );
    }
    Check::new("mutation_control", false, "no draw with a solvable honest and mutated program".into())
}

fn lift_side(h: &CMatrix, q: &CMatrix) -> CMatrix {
    nfstar_conic::hermitized(&(h.adjoint() * q * h))
}

/// Maximum worst-ER harvested power of the nominal lifted program
/// (rates, secrecy, beampattern and power constraints at the estimates),
/// written directly against the conic modeling layer. `None` when the
/// program is infeasible.
pub fn nominal_optimum(ch: &ChannelSet, thr: &Thresholds, q: [&CMatrix; 2], sensing: bool) -> Result<Option<f64>, String> {
    let (m, k) = (ch.m(), ch.k());
    let p = thr.p_max;
    let (gamma, eta) = (2f64.powf(thr.r_th) - 1.0, 2f64.powf(thr.r_eth) - 1.0);
    let mut prog = ConicProgram::new();
    let w: Vec<MatrixVar> = (0..k).map(|j| prog.add_matrix_var(format!("W{j}"), m, true)).collect();
    let v = sensing.then(|| prog.add_matrix_var("V", m, true));
    let x = prog.add_scalar_var("x", Sign::Free);

    // sum_j c_j <A, W_j> + c_v <A, V>, with W and V in units of p
    let combo = |a: &CMatrix, cw: &dyn Fn(usize) -> f64, cv: f64, scale: f64| {
        let mut e = LinearExpr::new();
        for (j, wj) in w.iter().enumerate() {
            e.extend(LinearExpr::trace_with(wj, a, cw(j) * p * scale));
        }
        if let Some(v) = &v {
            e.extend(LinearExpr::trace_with(v, a, cv * p * scale));
        }
        e
    };

    let mut power = LinearExpr::constant(1.0);
    let eye = CMatrix::identity(m, m);
    power.extend(combo(&eye, &|_| -1.0 / p, -1.0 / p, 1.0));
    prog.add_linear("power", power, Relation::Ge);

    for kk in 0..k {
        let a = lift_side(&ch.h_hat[kk], q[ch.ir_side[kk].index()]);
        // SINR rows divided by the noise power, then scaled to order one.
        let s = 1.0 / (p * a.trace().re / thr.noise_ir + gamma);
        let row = combo(&a, &|j| if j == kk { 1.0 } else { -gamma }, -gamma, s / thr.noise_ir).add_constant(-gamma * s);
        prog.add_linear(format!("ir{kk}"), row, Relation::Ge);
    }
    let mut unit = 0.0f64;
    let bs: Vec<CMatrix> = (0..ch.e()).map(|e| lift_side(&ch.f_hat[e], q[ch.er_side[e].index()])).collect();
    for (e, b) in bs.iter().enumerate() {
        unit = unit.max(thr.eh_efficiency[e] * p * b.trace().re);
        let s = 1.0 / (p * b.trace().re / thr.noise_er + eta);
        for kk in 0..k {
            let row = combo(b, &|j| if j == kk { -1.0 } else { eta }, eta, s / thr.noise_er).add_constant(eta * s);
            prog.add_linear(format!("eve{e}_{kk}"), row, Relation::Ge);
        }
    }
    let unit = if unit > 0.0 { unit } else { 1.0 };
    for (e, b) in bs.iter().enumerate() {
        let mut row = combo(b, &|_| thr.eh_efficiency[e], thr.eh_efficiency[e], 1.0 / unit);
        row.push(x.coord, -1.0);
        prog.add_linear(format!("energy{e}"), row, Relation::Ge);
    }
    for t in 0..ch.t() {
        let c = lift_side(&ch.ht_hat[t], q[ch.tar_side[t].index()]);
        let s = 1.0 / (p * c.trace().re).max(thr.lambda_gain);
        let row = combo(&c, &|_| 1.0, 1.0, s).add_constant(-thr.lambda_gain * s);
        prog.add_linear(format!("sensing{t}"), row, Relation::Ge);
    }
    prog.set_objective(LinearExpr::term(x.coord, 1.0));
    let res = nfstar_conic::solve(&prog, &Settings::default()).map_err(|e| e.to_string())?;
    match (res.status, res.values) {
        (nfstar_conic::SolveStatus::Optimal, Some(a)) => Ok(Some(a.scalar(&x) * unit)),
        (nfstar_conic::SolveStatus::Infeasible, _) => Ok(None),
        (s, _) => Err(format!("{s:?}: {}", res.detail)),
    }
}

/// With zero channel error the robust program (both zero-radius forms)
/// reaches the nominal optimum.
pub fn zero_radius_consistency(opts: &VerifyOptions) -> Check {
    let mut cfg = opts.system.clone();
    cfg.rho = 0.0;
    let thr = Thresholds::from_config(&cfg);
    let mut compared = 0;
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for i in 0..4 * opts.scenarios {
        if compared == opts.scenarios {
            break;
        }
        let seed = draw_seed(opts.seed_base, i, 0);
        let Ok((sc, init)) = draw(&cfg, seed, BaselineKind::Proposed) else { continue };
        let q = [&init.t.q, &init.r.q];
        let nominal = match nominal_optimum(&sc.channels, &thr, q, true) {
            Ok(v) => v,
            Err(e) => return Check::new("zero_radius_consistency", false, format!("draw {seed}: nominal solve failed: {e}")),
        };
        for zr in [ZeroRadius::Scalar, ZeroRadius::Lmi] {
            let ac = ActiveConfig { assembly: AssemblyOptions { zero_radius: zr, mutation: None }, ..ActiveConfig::default() };
            let robust = solve_relaxed(&sc.channels, &thr, q, &ac);
            match (nominal, robust) {
                (Some(a), Ok(b)) => {
                    let rel = (a - b.xi).abs() / a.abs().max(1e-300);
                    worst = worst.max(rel);
                    lines.push(format!("draw {seed} {zr:?}: {rel:.1e}"));
                }
                (None, Err(ActiveError::Infeasible(_))) => {}
                (a, b) => {
                    return Check::new(
                        "zero_radius_consistency",
                        false,
                        format!("draw {seed} {zr:?}: nominal {a:?} vs robust {:?}", b.map(|s| s.xi).map_err(|e| e.to_string())),
                    )
                }
            }
        }
        if nominal.is_some() {
            compared += 1;
        }
    }
    let ok = compared == opts.scenarios && worst <= 1e-4;
    Check::new("zero_radius_consistency", ok, format!("{compared} draws, worst relative gap {worst:.2e} ({})", lines.join(", ")))
}

/// The full suite.
pub fn verify(opts: &VerifyOptions) -> VerifyReport {
    let mut checks = vec![
        kron_identity(100, 1),
        hermitian_embedding(100, 2),
        rank_gap_tail(100, 3),
        surrogate_majorization(1000, 4),
        lifted_vector_equivalence(100, 5),
    ];
    let designs = robust_designs(opts);
    checks.push(s_procedure_soundness(&designs, opts.samples));
    checks.push(conservation_audit(&designs));
    checks.push(mutation_control(opts, opts.samples));
    checks.push(zero_radius_consistency(opts));
    VerifyReport { checks }
}
