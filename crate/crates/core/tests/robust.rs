use nfstar_conic::{solve, Coord, LinearExpr, Lmi, Relation, Settings, Sign, SolveStatus, SparseHermitian};
use nfstar_core::active::{solve_relaxed, ActiveConfig};
use nfstar_core::ao::{initial_surface_for, BaselineKind};
use nfstar_core::config::SystemConfig;
use nfstar_core::geometry::{ChannelSet, Scenario};
use nfstar_core::metrics::{StarCoefficients, Thresholds, TransmitDesign};
use nfstar_core::robust::*;
use nfstar_core::{CMatrix, CVector, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cmat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    CMatrix::from_fn(r, c, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn herm(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let a = cmat(n, n, rng);
    (&a + a.adjoint()) * C64::new(0.5, 0.0)
}

fn psd(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let a = cmat(n, n, rng);
    &a * a.adjoint()
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

fn dense_to_sparse(m: &CMatrix) -> SparseHermitian {
    SparseHermitian::from_dense(m, 0.0)
}

/// One S-procedure block as a conic program in `(tau, c)`, where `c` is the
/// right-hand side of the constraint. Returns the program and both coords.
fn single_block(h: &CMatrix, q: &CMatrix, s: &CMatrix, delta: f64, c: Option<f64>) -> (nfstar_conic::ConicProgram, Coord, Coord) {
    let mut prog = nfstar_conic::ConicProgram::new();
    let tau = prog.add_scalar_var("tau", Sign::NonNeg);
    let cv = prog.add_scalar_var("c", Sign::Free);
    let base = build_lmi(h, q, s, delta, 0.0, 0.0).unwrap();
    let with_tau = build_lmi(h, q, s, delta, 0.0, 1.0).unwrap();
    let n = base.nrows();
    let mut corner = CMatrix::zeros(n, n);
    corner[(n - 1, n - 1)] = C64::new(-1.0, 0.0);
    let mut lmi = Lmi::new("block", n);
    lmi.set_constant(base.clone());
    lmi.add_terms(vec![(tau.coord, dense_to_sparse(&(&with_tau - &base))), (cv.coord, dense_to_sparse(&corner))]);
    prog.add_lmi(lmi);
    match c {
        Some(c) => {
            prog.add_linear("fix", LinearExpr::term(cv.coord, 1.0).add_constant(-c), Relation::Eq);
            prog.set_objective(LinearExpr::term(tau.coord, -1.0));
        }
        None => prog.set_objective(LinearExpr::term(cv.coord, 1.0)),
    }
    (prog, tau.coord, cv.coord)
}

#[test]
fn kron_form_examples() {
    let s = |v: f64, w: f64| CMatrix::from_element(1, 1, C64::new(v, w));
    let (a, b, c, d) = (s(1.0, 2.0), s(0.5, -1.0), s(2.0, 0.0), s(0.0, 3.0));
    let want = C64::new(1.0, -2.0) * C64::new(0.5, -1.0) * C64::new(2.0, 0.0) * C64::new(0.0, 3.0);
    assert!((kron_quadratic_form(&a, &b, &c, &d).unwrap() - want).norm() < 1e-15);
    let i2 = CMatrix::identity(2, 2);
    assert_eq!(kron_quadratic_form(&i2, &i2, &i2, &i2).unwrap(), C64::new(2.0, 0.0));
    assert!(matches!(kron_quadratic_form(&i2, &CMatrix::identity(3, 3), &i2, &i2), Err(RobustError::Dimension(_))));
}

#[test]
fn kron_form_matches_trace_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for i in 0..100 {
        let (n, m) = (2 + i % 3, 3 + i % 2);
        let a = cmat(n, m, &mut rng);
        let b = cmat(n, n, &mut rng);
        let c = cmat(n, m, &mut rng);
        let d = cmat(m, m, &mut rng);
        let got = kron_quadratic_form(&a, &b, &c, &d).unwrap();
        let want = (a.adjoint() * &b * &c * &d).trace();
        assert!((got - want).norm() <= 1e-12 * want.norm().max(1.0), "instance {i}: {got} vs {want}");
    }
}

#[test]
fn s_matrix_examples_and_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w1 = psd(3, &mut rng);
    let zero = CMatrix::zeros(3, 3);
    let s = build_s_matrices(&[w1.clone()], &zero, 1.0, 1.0).unwrap();
    assert_eq!(s.s1[0], w1.transpose());
    assert_eq!(s.s3[0], -w1.transpose());

    let w = vec![psd(3, &mut rng), psd(3, &mut rng)];
    let v = psd(3, &mut rng);
    let gamma = 3.0;
    let s = build_s_matrices(&w, &v, gamma, 1.0).unwrap();
    assert_eq!(s.s2, s.s4);
    for k in 0..2 {
        let others = (&w[1 - k] + &v).transpose();
        let lhs = &s.s1[k] * C64::new(gamma, 0.0) + &others * C64::new(gamma, 0.0);
        assert!((lhs - w[k].transpose()).norm() < 1e-12);
    }
    assert!(matches!(build_s_matrices(&w, &v, 0.0, 1.0), Err(RobustError::Threshold(_))));
    assert!(matches!(build_s_matrices(&w, &v, 1.0, 0.0), Err(RobustError::Threshold(_))));
}

#[test]
fn lmi_block_dimensions_and_eve_corner() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = cmat(2, 2, &mut rng);
    let q = psd(2, &mut rng);
    let s = herm(2, &mut rng);
    assert_eq!(build_lmi(&h, &q, &s, 0.1, 0.0, 1.0).unwrap().shape(), (5, 5));
    assert!(build_lmi(&h, &q, &CMatrix::identity(3, 3), 0.1, 0.0, 1.0).is_err());

    // Eve block with eta = 1, one user, no sensing: S = -W^T, corner keeps +noise
    let w = psd(2, &mut rng);
    let sm = build_s_matrices(&[w], &CMatrix::zeros(2, 2), 1.0, 1.0).unwrap();
    let thr = Thresholds { r_th: 1.0, r_eth: 1.0, lambda_gain: 1.0, p_max: 1.0, noise_ir: 0.1, noise_er: 0.25, eh_efficiency: vec![1.0] };
    let fam = LmiFamily { kind: LmiKind::Eve, k: Some(0), e: Some(0), t: None, side: nfstar_core::config::Side::R, radius: 0.3 };
    let (tau, delta) = (0.7, 0.3);
    let b = build_lmi(&h, &q, &sm.s3[0], delta, fam.offset(&thr, 0.0), tau).unwrap();
    let quad = quadratic_value(&h, &q, &sm.s3[0]);
    let corner = b[(4, 4)].re;
    assert!((corner - (quad + 0.25 - tau * delta * delta)).abs() < 1e-12);
}

#[test]
fn quadratic_value_matches_kron_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = cmat(3, 2, &mut rng);
    let q = psd(3, &mut rng);
    let s = herm(2, &mut rng);
    let k = kron_quadratic_form(&h, &q, &h, &s.transpose()).unwrap();
    assert!((quadratic_value(&h, &q, &s) - k.re).abs() < 1e-12 * k.norm());
}

#[test]
fn zero_radius_lmi_matches_scalar_inequality() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let settings = Settings::default();
    let mut seen = [0usize; 2];
    for _ in 0..12 {
        let h = cmat(2, 2, &mut rng);
        let q = psd(2, &mut rng);
        let s = herm(2, &mut rng);
        let quad = quadratic_value(&h, &q, &s);
        let scale = constraint_scale(&h, &q, &s, 0.0, 0.0);
        let c = quad + rng.random_range(-0.3..0.3) * scale;
        if (quad - c).abs() < 0.02 * scale {
            continue;
        }
        let (prog, _, _) = single_block(&h, &q, &s, 0.0, Some(c));
        let res = solve(&prog, &settings).unwrap();
        let nominal_ok = quad > c;
        let lmi_ok = res.status == SolveStatus::Optimal;
        assert_eq!(lmi_ok, nominal_ok, "quad {quad} c {c} status {:?}", res.status);
        if !lmi_ok {
            assert_eq!(res.status, SolveStatus::Infeasible);
        }
        seen[nominal_ok as usize] += 1;
    }
    assert!(seen[0] > 0 && seen[1] > 0, "both outcomes exercised: {seen:?}");
}

#[test]
fn s_procedure_bound_is_exact_and_sound() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let settings = Settings::default();
    for _ in 0..4 {
        let h = cmat(2, 3, &mut rng);
        let q = psd(2, &mut rng);
        let s = herm(3, &mut rng);
        let delta = 0.2 * h.norm();
        let (prog, _, c_coord) = single_block(&h, &q, &s, delta, None);
        let res = solve(&prog, &settings).unwrap();
        assert!(res.is_optimal(), "{}", res.detail);
        let c_star = res.values.unwrap().coord(c_coord);

        // The lemma is lossless for one constraint: the certified right-hand
        // side equals the trust-region minimum over the ball.
        let exact = worst_case_margin(&h, &q, &s, delta, 0.0).margin;
        let scale = constraint_scale(&h, &q, &s, delta, 0.0);
        assert!((c_star - exact).abs() < 1e-6 * scale, "sdp {c_star} vs trust region {exact}");

        let ok = verify_s_procedure("block", &h, &q, &s, delta, c_star, 10_000, 1e-6, &mut rng);
        assert_eq!(ok.samples, 10_000);
        assert_eq!(ok.violations, 0, "worst relative {}", ok.worst_relative);

        // Negative control: promising slightly more than the certificate.
        let bad = verify_s_procedure("block", &h, &q, &s, delta, c_star + 1e-3 * scale, 10_000, 1e-6, &mut rng);
        assert!(bad.violations >= 1);
    }
}

#[test]
fn zero_radius_verification_uses_one_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = cmat(2, 2, &mut rng);
    let q = psd(2, &mut rng);
    let s = psd(2, &mut rng);
    let rep = verify_s_procedure("x", &h, &q, &s, 0.0, 0.0, 10_000, 1e-9, &mut rng);
    assert_eq!(rep.samples, 1);
    assert_eq!(rep.violations, 0);
}

#[test]
fn desk_program_structure() {
    let (ch, thr, _) = desk(0.02, 3);
    let q_full = CMatrix::identity(ch.n(), ch.n()) * C64::new(0.5, 0.0);
    let aopts = AssemblyOptions { zero_radius: ZeroRadius::Lmi, mutation: None };
    let prog = assemble_active(&ch, &thr, [&q_full, &q_full], &ActiveOptions::relaxed(ch.k()), &aopts).unwrap();
    let lmis = prog.program.lmis();
    assert_eq!(lmis.len(), ch.e() + ch.k() + ch.k() * ch.e() + ch.t());
    assert_eq!(lmis.len(), 10);
    let x: Vec<f64> = (0..prog.program.coord_count()).map(|i| ((i * 7919) % 13) as f64 / 13.0).collect();
    for l in lmis {
        assert_eq!(l.dim, ch.m() * ch.n() + 1);
        assert!(nfstar_conic::hermitian_residual(&l.evaluate(&x)) <= 1e-12);
    }
    prog.program.validate().unwrap();

    let star = StarCoefficients::random_equal_split(ch.n(), &mut ChaCha8Rng::seed_from_u64(0));
    let design = TransmitDesign::from_lifted(vec![CMatrix::identity(4, 4); 2], CMatrix::zeros(4, 4));
    assert!(matches!(assemble_robust_program(&ch, &thr, Some(&star), Some(&design), &aopts), Err(RobustError::FixedVariables)));
    assert!(matches!(assemble_robust_program(&ch, &thr, None, None, &aopts), Err(RobustError::FixedVariables)));
    match assemble_robust_program(&ch, &thr, None, Some(&design), &aopts).unwrap() {
        Assembled::Passive(p) => assert_eq!(p.program.lmis().len(), 10),
        Assembled::Active(_) => panic!("fixed transmit design gives the passive problem"),
    }
}

#[test]
fn assembled_solution_satisfies_raw_blocks() {
    let (ch, thr, init) = desk(0.02, 3);
    let q = [&init.t.q, &init.r.q];
    let aopts = AssemblyOptions::default();
    let prog = assemble_active(&ch, &thr, q, &ActiveOptions::relaxed(ch.k()), &aopts).unwrap();
    let res = solve(&prog.program, &Settings::default()).unwrap();
    assert!(res.is_optimal(), "{}", res.detail);
    let values = res.values.unwrap();
    let sol = prog.decode(&values);

    let s = build_s_matrices(&sol.w, &sol.v, thr.gamma(), thr.eta()).unwrap();
    for f in families(&ch) {
        let tau_n = prog.program.scalar_var(&format!("tau_{}", f.name())).map(|v| values.coord(v.coord)).expect("positive radius");
        let (h, qq, ss) = (f.estimate(&ch), q[f.side.index()], f.s_matrix(&s));
        let off = f.offset(&thr, sol.xi);
        let raw = build_lmi(h, qq, ss, f.radius, off, tau_n * prog.norm.p_max).unwrap();
        let hn = h.norm();
        let mut dm = CMatrix::identity(raw.nrows(), raw.nrows());
        dm[(raw.nrows() - 1, raw.nrows() - 1)] = C64::new(1.0 / hn, 0.0);
        let balanced = &dm * &raw * &dm / C64::new(prog.norm.p_max, 0.0);
        let lmin = nfstar_conic::min_eigenvalue(&nfstar_conic::hermitized(&balanced));
        let size = nfstar_conic::eigenvalues(&balanced).iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(lmin >= -1e-6 * size.max(1.0), "{}: {lmin}", f.name());
    }
    for (f, rel) in worst_case_margins(&sol.w, &sol.v, q, sol.xi, &ch, &thr).unwrap() {
        assert!(rel >= -1e-6, "{}: {rel}", f.name());
    }
}

#[test]
fn scalar_and_lmi_forms_agree_at_zero_radius() {
    let (ch, thr, init) = desk(0.0, 3);
    let q = [&init.t.q, &init.r.q];
    let mut cfg = ActiveConfig::default();
    let scalar = solve_relaxed(&ch, &thr, q, &cfg).unwrap();
    cfg.assembly.zero_radius = ZeroRadius::Lmi;
    let lmi = solve_relaxed(&ch, &thr, q, &cfg).unwrap();
    assert!((scalar.xi - lmi.xi).abs() <= 1e-4 * scalar.xi.abs(), "{} vs {}", scalar.xi, lmi.xi);
}

#[test]
fn optimum_is_nonincreasing_in_radius() {
    let (ch, thr, init) = desk(0.0, 3);
    let q = [&init.t.q, &init.r.q];
    let cfg = ActiveConfig::default();
    let xis: Vec<f64> = [0.0, 0.01, 0.02]
        .iter()
        .map(|&rho| solve_relaxed(&ch.with_rho(rho), &thr, q, &cfg).unwrap().xi)
        .collect();
    for p in xis.windows(2) {
        assert!(p[1] <= p[0] * (1.0 + 1e-6), "{xis:?}");
    }
}

#[test]
fn sign_flip_mutation_is_caught_by_sampling() {
    // On this deployment the Eve blocks bind at the default thresholds.
    let (ch, thr, init) = desk(0.02, 3);
    let q = [&init.t.q, &init.r.q];
    let mut cfg = ActiveConfig::default();
    let honest = solve_relaxed(&ch, &thr, q, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let count = |w: &[CMatrix], v: &CMatrix, xi: f64, rng: &mut ChaCha8Rng| -> usize {
        verify_design(w, v, q, xi, &ch, &thr, 2_000, 1e-6, rng)
            .unwrap()
            .iter()
            .filter(|(f, _)| f.kind == LmiKind::Eve)
            .map(|(_, r)| r.violations)
            .sum()
    };
    assert_eq!(count(&honest.w, &honest.v, honest.xi, &mut rng), 0);

    cfg.assembly.mutation = Some(Mutation::EveCornerSignFlip);
    let mutated = solve_relaxed(&ch, &thr, q, &cfg).unwrap();
    assert!(mutated.xi > honest.xi);
    assert!(count(&mutated.w, &mutated.v, mutated.xi, &mut rng) >= 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trust_region_minimum_bounds_samples(seed in any::<u64>(), rel in 0.01f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = cmat(2, 2, &mut rng);
        let q = psd(2, &mut rng);
        let s = herm(2, &mut rng);
        let delta = rel * h.norm();
        let wc = worst_case_margin(&h, &q, &s, delta, 0.0);
        prop_assert!(wc.perturbation.norm() <= delta * (1.0 + 1e-12));
        let scale = constraint_scale(&h, &q, &s, delta, 0.0);
        for _ in 0..200 {
            let d = nfstar_core::geometry::sample_uncertainty(delta, 2, 2, 0.5, &mut rng);
            prop_assert!(quadratic_value(&(&h + d), &q, &s) >= wc.margin - 1e-10 * scale);
        }
    }

    #[test]
    fn trust_region_direction_is_stationary(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = herm(4, &mut rng);
        let g = CVector::from_fn(4, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let d = trust_region_min(&a, &g, 0.7);
        let f = |x: &CVector| x.dotc(&(&a * x)).re + 2.0 * g.dotc(x).re;
        let best = f(&d);
        for _ in 0..200 {
            let mut x = CVector::from_fn(4, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let n = x.norm();
            if n > 0.7 {
                x *= C64::new(0.7 / n, 0.0);
            }
            prop_assert!(f(&x) >= best - 1e-10);
        }
    }
}
