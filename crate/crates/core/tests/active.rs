use nfstar_core::active::*;
use nfstar_core::ao::{initial_surface_for, BaselineKind};
use nfstar_core::config::SystemConfig;
use nfstar_core::geometry::{ChannelSet, NodeLayout, Scenario};
use nfstar_core::metrics::{check_feasibility, FeasibilityTolerances, StarCoefficients, Thresholds, TransmitDesign};
use nfstar_core::robust::ActiveSolution;
use nfstar_core::{CMatrix, CVector, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cvec(n: usize, rng: &mut ChaCha8Rng) -> CVector {
    CVector::from_fn(n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn desk(rho: f64, seed: u64) -> (ChannelSet, Thresholds, StarCoefficients) {
    let mut cfg = SystemConfig::desk();
    cfg.rho = rho;
    let thr = Thresholds::from_config(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sc = Scenario::generate(&cfg, &mut rng).unwrap();
    let mut irng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let init = initial_surface_for(BaselineKind::Proposed, cfg.n(), &mut irng);
    (sc.channels, thr, init)
}

#[test]
fn dominant_eigvec_is_deterministic_and_unit_norm() {
    let (l, v) = dominant_eigvec(&CMatrix::identity(3, 3));
    assert!((l - 1.0).abs() < 1e-12);
    assert!((v.norm() - 1.0).abs() < 1e-12);
    assert!((v[0] - C64::new(1.0, 0.0)).norm() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = cvec(4, &mut rng);
    let m = &w * w.adjoint();
    let (_, a) = dominant_eigvec(&m);
    let (_, b) = dominant_eigvec(&m.clone());
    assert_eq!(a, b);
    assert!(a[0].im.abs() < 1e-12 && a[0].re >= 0.0);
}

#[test]
fn extract_rank_one_examples() {
    let d = CMatrix::from_diagonal(&CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]));
    let r = extract_rank_one(&d, 1e-3).unwrap();
    assert!((r.w[0] - C64::new(1.0, 0.0)).norm() < 1e-12 && r.w[1].norm() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = cvec(4, &mut rng);
    let r = extract_rank_one(&(&w * w.adjoint()), 1e-3).unwrap();
    assert!(r.residual <= 1e-10);
    // same vector up to a global phase
    let phase = w.dotc(&r.w) / C64::new(w.norm_squared(), 0.0);
    assert!((phase.norm() - 1.0).abs() < 1e-10);
    assert!((&r.w - &w * phase).norm() < 1e-10);

    let u = cvec(4, &mut rng);
    let near = &w * w.adjoint() + &u * u.adjoint() * C64::new(1e-6, 0.0);
    let r = extract_rank_one(&near, 1e-3).unwrap();
    assert!(r.residual <= r.bound * (1.0 + 1e-9), "{} > {}", r.residual, r.bound);

    let full = CMatrix::identity(3, 3);
    assert!(matches!(extract_rank_one(&full, 1e-3), Err(ActiveError::NotRankOne(_))));
}

#[test]
fn rank_one_ratio_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let a = CMatrix::from_fn(4, 2, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let w = &a * a.adjoint();
        let r = rank_one_ratio(&w);
        assert!(r > 0.0 && r <= 1.0);
        assert!(r < 1.0 - 1e-9);
    }
    let w = cvec(4, &mut rng);
    assert!((rank_one_ratio(&(&w * w.adjoint())) - 1.0).abs() < 1e-12);
}

#[test]
fn cut_is_linear_in_w() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let q = cvec(3, &mut rng).normalize();
    let u = 0.7;
    let cut = |w: &CMatrix| q.dotc(&(w * &q)).re - u * w.trace().re;
    for _ in 0..20 {
        let a = cvec(3, &mut rng);
        let b = cvec(3, &mut rng);
        let (w1, w2) = (&a * a.adjoint(), &b * b.adjoint());
        let (x, y) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
        let mix = &w1 * C64::new(x, 0.0) + &w2 * C64::new(y, 0.0);
        assert!((cut(&mix) - (x * cut(&w1) + y * cut(&w2))).abs() < 1e-12);
    }
}

#[test]
fn relaxed_solve_matches_eigen_beamforming_when_only_energy_binds() {
    let (full, mut thr, init) = desk(0.0, 3);
    // one IR, one ER, one target; negligible rate and sensing requirements
    let layout = NodeLayout {
        ir_positions: Vec::new(),
        er_positions: Vec::new(),
        target_positions: Vec::new(),
        ir_sides: vec![full.ir_side[0]],
        er_sides: vec![full.er_side[0]],
        target_sides: vec![full.tar_side[0]],
    };
    let ch = ChannelSet::from_vectors(
        full.g.clone(),
        vec![full.h_ir[0].clone()],
        vec![full.g_er[0].clone()],
        vec![full.h_tar[0].clone()],
        &layout,
        0.0,
    )
    .unwrap();
    thr.r_th = 1e-6;
    thr.r_eth = 30.0;
    thr.lambda_gain = 1e-30;
    thr.eh_efficiency = vec![0.8];
    let q = [&init.t.q, &init.r.q];
    let sol = solve_relaxed(&ch, &thr, q, &ActiveConfig::default()).unwrap();
    let f = &ch.f_hat[0];
    let b = f.adjoint() * q[ch.er_side[0].index()] * f;
    let lmax = nfstar_conic::eigh_desc(&nfstar_conic::hermitized(&b)).0[0];
    let want = 0.8 * thr.p_max * lmax;
    assert!(sol.xi > 0.0);
    assert!((sol.xi - want).abs() <= 1e-4 * want, "{} vs {}", sol.xi, want);
}

#[test]
fn relaxed_solve_respects_power_budget() {
    let (ch, thr, init) = desk(0.0, 3);
    let sol = solve_relaxed(&ch, &thr, [&init.t.q, &init.r.q], &ActiveConfig::default()).unwrap();
    let used: f64 = sol.w.iter().map(|w| w.trace().re).sum::<f64>() + sol.v.trace().re;
    assert!(used <= thr.p_max * (1.0 + 1e-6));
    for w in sol.w.iter().chain(std::iter::once(&sol.v)) {
        assert!(nfstar_conic::min_eigenvalue(w) >= -1e-7 * thr.p_max);
    }
}

#[test]
fn vanishing_power_budget_is_infeasible() {
    let (ch, mut thr, init) = desk(0.0, 3);
    thr.p_max = 1e-12;
    let r = solve_relaxed(&ch, &thr, [&init.t.q, &init.r.q], &ActiveConfig::default());
    assert!(matches!(r, Err(ActiveError::Infeasible(_))), "{r:?}");
}

#[test]
fn rejected_step_halves_step_size() {
    let (ch, mut thr, init) = desk(0.0, 3);
    thr.p_max = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = cvec(4, &mut rng);
    let b = cvec(4, &mut rng);
    let rank_two = &a * a.adjoint() + &b * b.adjoint() * C64::new(0.3, 0.0);
    let rank_one = &a * a.adjoint();
    let design = ActiveSolution { w: vec![rank_two.clone(), rank_one], v: CMatrix::zeros(4, 4), xi: 1.0 };
    let mut state = SrocrState::new(design, &SrocrSettings::default());
    assert_eq!(state.u, vec![0.0, 0.0]);
    assert_eq!(state.upsilon, vec![0.1, 0.1]);
    let feasible = srocr_step(&mut state, &ch, &thr, [&init.t.q, &init.r.q], &ActiveConfig::default()).unwrap();
    assert!(!feasible);
    assert_eq!(state.upsilon, vec![0.05, 0.05]);
    // u recomputed from the previous (kept) design
    assert!((state.u[0] - (rank_one_ratio(&rank_two) + 0.05)).abs() < 1e-12);
    assert_eq!(state.u[1], 1.0);
}

#[test]
fn step_with_zero_relaxation_equals_relaxed_solve() {
    let (ch, thr, init) = desk(0.0, 3);
    let q = [&init.t.q, &init.r.q];
    let cfg = ActiveConfig::default();
    let relaxed = solve_relaxed(&ch, &thr, q, &cfg).unwrap();
    let mut state = SrocrState::new(relaxed.clone(), &SrocrSettings::default());
    assert!(srocr_step(&mut state, &ch, &thr, q, &cfg).unwrap());
    assert!((state.design.xi - relaxed.xi).abs() <= 1e-6 * relaxed.xi.abs());
}

#[test]
fn srocr_converges_to_rank_one_feasible_design() {
    let (ch, thr, init) = desk(0.0, 3);
    let q = [&init.t.q, &init.r.q];
    let settings = SrocrSettings::default();
    let out = run_srocr(&ch, &thr, q, &ActiveConfig::default(), &settings).unwrap();
    assert_eq!(out.status, SrocrStatus::Converged);
    assert_eq!(out.trace[0].u, vec![0.0; ch.k()]);
    assert_eq!(out.trace[0].upsilon, vec![0.1; ch.k()]);
    for r in &out.trace {
        assert!(r.u.iter().all(|&u| (0.0..=1.0).contains(&u)));
        assert!(r.upsilon.iter().all(|&y| y > 0.0));
    }
    for r in &out.eigen_ratios {
        assert!(*r <= 1e-4, "{r}");
    }
    // the relaxation upper-bounds every accepted step
    for r in out.trace.iter().filter(|r| r.feasible) {
        assert!(r.xi <= out.relaxed.xi * (1.0 + 1e-6));
    }

    let w: Vec<CVector> = out.design.w.iter().map(|w| extract_rank_one(w, 1e-3).unwrap().w).collect();
    let design = TransmitDesign::from_vectors(w, out.design.v.clone());
    let star = init.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let rep = check_feasibility(&design, &star, &ch, &thr, 0, FeasibilityTolerances::default(), &mut rng).unwrap();
    for c in &rep.checks {
        let scale = if c.name.starts_with("beampattern") { thr.lambda_gain } else if c.name == "power" { thr.p_max } else { 1.0 };
        assert!(c.nominal_margin >= -1e-5 * scale, "{}: {}", c.name, c.nominal_margin);
    }
}

proptest! {
    #[test]
    fn eigen_ratio_is_zero_only_for_rank_one(seed in any::<u64>(), eps in 1e-3f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = cvec(3, &mut rng);
        let b = cvec(3, &mut rng);
        let one = &a * a.adjoint();
        prop_assert!(eigen_ratio(&one) < 1e-12);
        let two = &one + &b * b.adjoint() * C64::new(eps, 0.0);
        let r = eigen_ratio(&two);
        prop_assert!(r > 0.0 && r <= 1.0);
    }
}
