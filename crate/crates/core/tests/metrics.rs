use nfstar_core::config::Side;
use nfstar_core::geometry::{ChannelSet, NodeLayout};
use nfstar_core::metrics::*;
use nfstar_core::{CMatrix, CVector, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const M: usize = 3;
const N: usize = 4;

fn cvec(n: usize, rng: &mut ChaCha8Rng) -> CVector {
    CVector::from_fn(n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn cmat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    CMatrix::from_fn(r, c, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn psd(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let a = cmat(n, n, rng);
    &a * a.adjoint() * C64::new(0.2, 0.0)
}

fn layout(k: usize, e: usize, t: usize) -> NodeLayout {
    let alt = |n: usize| (0..n).map(|i| if i % 2 == 0 { Side::R } else { Side::T }).collect();
    NodeLayout {
        ir_positions: Vec::new(),
        er_positions: Vec::new(),
        target_positions: Vec::new(),
        ir_sides: alt(k),
        er_sides: alt(e),
        target_sides: alt(t),
    }
}

fn channels(rng: &mut ChaCha8Rng, rho: f64) -> ChannelSet {
    let g = cmat(N, M, rng);
    let vs = |n: usize, rng: &mut ChaCha8Rng| (0..n).map(|_| cvec(N, rng)).collect::<Vec<_>>();
    let (h, f, t) = (vs(2, rng), vs(2, rng), vs(2, rng));
    ChannelSet::from_vectors(g, h, f, t, &layout(2, 2, 2), rho).unwrap()
}

fn thresholds() -> Thresholds {
    Thresholds {
        r_th: 1.0,
        r_eth: 0.5,
        lambda_gain: 0.1,
        p_max: 10.0,
        noise_ir: 0.3,
        noise_er: 0.2,
        eh_efficiency: vec![0.7, 0.9],
    }
}

fn star(rng: &mut ChaCha8Rng) -> StarCoefficients {
    StarCoefficients::random_equal_split(N, rng)
}

fn vector_design(rng: &mut ChaCha8Rng, k: usize) -> TransmitDesign {
    TransmitDesign::from_vectors((0..k).map(|_| cvec(M, rng)).collect(), psd(M, rng))
}

fn lifted_of(d: &TransmitDesign) -> TransmitDesign {
    TransmitDesign::from_lifted(d.lifted(), d.v.clone())
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn sinr_threshold_examples() {
    assert_eq!(sinr_thresholds(2.0, 1.0), (3.0, 1.0));
    assert_eq!(sinr_thresholds(0.0, 0.0).0, 0.0);
}

/// Single-user link whose received power is exactly `p` through `phi`.
fn scalar_link(p: f64) -> (CMatrix, SideCoefficients, CVector) {
    let phi = CVector::from_element(N, C64::new(0.5f64.sqrt(), 0.0));
    let mut h = CMatrix::zeros(N, M);
    h[(0, 0)] = C64::new(p.sqrt() / 0.5f64.sqrt(), 0.0);
    let mut w = CVector::zeros(M);
    w[0] = C64::new(1.0, 0.0);
    (h, SideCoefficients::from_phi(phi), w)
}

#[test]
fn rate_is_one_bit_at_unit_snr() {
    let noise = 0.25;
    let (h, side, w) = scalar_link(noise);
    let d = TransmitDesign::from_vectors(vec![w], CMatrix::zeros(M, M));
    assert!((ir_rate_with(0, &h, &side, &d, noise).unwrap() - 1.0).abs() < 1e-12);
    let zero = TransmitDesign::from_vectors(vec![CVector::zeros(M)], CMatrix::zeros(M, M));
    assert_eq!(ir_rate_with(0, &h, &side, &zero, noise).unwrap(), 0.0);
}

#[test]
fn eve_rate_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ch = channels(&mut rng, 0.0);
    let s = star(&mut rng);
    let thr = thresholds();
    // beamformers in the null space of the eavesdropper's effective channel
    let a = ch.f_hat[0].adjoint() * &s.side(ch.er_side[0]).phi;
    let w: Vec<CVector> = (0..2)
        .map(|_| {
            let x = cvec(M, &mut rng);
            &x - &a * (a.dotc(&x) / a.norm_squared())
        })
        .collect();
    let d = TransmitDesign::from_vectors(w, CMatrix::zeros(M, M));
    for k in 0..2 {
        assert!(eve_rate(0, k, &d, &s, &ch, &thr).unwrap().abs() < 1e-12);
    }

    let (h, side, w) = scalar_link(0.2);
    let d = TransmitDesign::from_vectors(vec![w], CMatrix::zeros(M, M));
    assert!((ir_rate_with(0, &h, &side, &d, 0.2).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn harvested_power_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ch = channels(&mut rng, 0.0);
    let s = star(&mut rng);
    let thr = thresholds();
    let zero = TransmitDesign::from_vectors(vec![CVector::zeros(M); 2], CMatrix::zeros(M, M));
    assert_eq!(harvested_power(0, &zero, &s, &ch, &thr).unwrap(), 0.0);

    let w = cvec(M, &mut rng);
    let c = (ch.f_hat[1].adjoint() * &s.side(ch.er_side[1]).phi).dotc(&w);
    let d = TransmitDesign::from_vectors(vec![w, CVector::zeros(M)], CMatrix::zeros(M, M));
    let p = harvested_power(1, &d, &s, &ch, &thr).unwrap();
    assert!(rel_close(p, 0.9 * c.norm_sqr(), 1e-12));
}

#[test]
fn beampattern_gain_hits_constructed_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ch = channels(&mut rng, 0.0);
    let s = star(&mut rng);
    let zero = TransmitDesign::from_vectors(vec![CVector::zeros(M); 2], CMatrix::zeros(M, M));
    assert_eq!(beampattern_gain(0, &zero, &s, &ch).unwrap(), 0.0);

    let lambda = 0.37;
    let a = ch.ht_hat[1].adjoint() * &s.side(ch.tar_side[1]).phi;
    // V = c a a^H gives tr(V a a^H) = c |a|^4
    let v = &a * a.adjoint() * C64::new(lambda / a.norm_squared().powi(2), 0.0);
    let d = TransmitDesign::from_lifted(vec![CMatrix::zeros(M, M); 2], v);
    assert!(rel_close(beampattern_gain(1, &d, &s, &ch).unwrap(), lambda, 1e-12));
}

#[test]
fn closed_forms_match_sample_averages() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ch = channels(&mut rng, 0.0);
    let s = star(&mut rng);
    let thr = thresholds();
    let d = vector_design(&mut rng, 2);
    let Beamformers::Vectors(ws) = &d.beams else { unreachable!() };
    let lv = d.v.clone().cholesky().unwrap().l();

    let a_er = ch.f_hat[0].adjoint() * &s.side(ch.er_side[0]).phi;
    let a_t = ch.ht_hat[0].adjoint() * &s.side(ch.tar_side[0]).phi;
    let draws = 100_000;
    let (mut acc_er, mut acc_t) = (0.0, 0.0);
    let cn = |rng: &mut ChaCha8Rng| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im) / 2f64.sqrt()
    };
    for _ in 0..draws {
        let mut x = &lv * CVector::from_fn(M, |_, _| cn(&mut rng));
        for w in ws {
            // unit-modulus symbols with uniform phase
            x += w * C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU));
        }
        acc_er += a_er.dotc(&x).norm_sqr();
        acc_t += a_t.dotc(&x).norm_sqr();
    }
    let mc_er = 0.7 * acc_er / draws as f64;
    let mc_t = acc_t / draws as f64;
    assert!(rel_close(harvested_power(0, &d, &s, &ch, &thr).unwrap(), mc_er, 0.01));
    assert!(rel_close(beampattern_gain(0, &d, &s, &ch).unwrap(), mc_t, 0.01));
}

#[test]
fn index_and_dimension_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ch = channels(&mut rng, 0.0);
    let s = star(&mut rng);
    let thr = thresholds();
    let d = vector_design(&mut rng, 2);
    assert!(matches!(ir_rate(5, &d, &s, &ch, &thr), Err(MetricsError::Index { .. })));
    let wrong = TransmitDesign::from_vectors(vec![CVector::zeros(M + 1); 2], CMatrix::zeros(M + 1, M + 1));
    assert!(matches!(ir_rate(0, &wrong, &s, &ch, &thr), Err(MetricsError::Dimension(_))));
}

#[test]
fn feasibility_report_audits_power_and_conservation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ch = channels(&mut rng, 0.05);
    let s = star(&mut rng);
    let thr = thresholds();
    let d = vector_design(&mut rng, 2);
    let rep = check_feasibility(&d, &s, &ch, &thr, 50, FeasibilityTolerances::default(), &mut rng).unwrap();
    let direct: f64 = d.lifted().iter().map(|w| w.trace().re).sum::<f64>() + d.v.trace().re;
    assert!(rel_close(rep.power_used, direct, 1e-14));
    assert_eq!(rep.power_budget, thr.p_max);
    assert!(rep.beta_residual < 1e-12);
    assert_eq!(rep.check("power").unwrap().nominal_margin, thr.p_max - rep.power_used);
    assert_eq!(rep.checks.len(), 2 + 2 * 2 + 2 + 2);
    assert!(rel_close(rep.total_harvested, rep.harvested.iter().sum(), 1e-15));
    for c in &rep.checks {
        assert!(c.worst_sampled_margin <= c.nominal_margin);
    }

    let mut skewed = s.clone();
    skewed.t.beta[0] += 0.1;
    let rep = check_feasibility(&d, &skewed, &ch, &thr, 0, FeasibilityTolerances::default(), &mut rng).unwrap();
    assert!((rep.beta_residual - 0.1).abs() < 1e-12);
    assert_eq!(rep.check("beta_conservation").unwrap().violations, 1);
}

#[test]
fn random_split_satisfies_surface_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let s = star(&mut rng);
    for side in [&s.t, &s.r] {
        for n in 0..N {
            assert!((side.phi[n].norm_sqr() - side.beta[n]).abs() < 1e-12);
            assert!((side.q[(n, n)].re - side.beta[n]).abs() < 1e-12);
        }
        assert!(nfstar_conic::min_eigenvalue(&side.q) > -1e-12);
    }
    assert!(s.beta_residual() < 1e-12);
}

proptest! {
    #[test]
    fn lifted_and_vector_forms_agree(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = channels(&mut rng, 0.0);
        let s = star(&mut rng);
        let thr = thresholds();
        let d = vector_design(&mut rng, 2);
        let l = lifted_of(&d);
        for k in 0..2 {
            prop_assert!(rel_close(ir_rate(k, &d, &s, &ch, &thr).unwrap(), ir_rate(k, &l, &s, &ch, &thr).unwrap(), 1e-10));
            for e in 0..2 {
                prop_assert!(rel_close(eve_rate(e, k, &d, &s, &ch, &thr).unwrap(), eve_rate(e, k, &l, &s, &ch, &thr).unwrap(), 1e-10));
            }
        }
        for e in 0..2 {
            prop_assert!(rel_close(harvested_power(e, &d, &s, &ch, &thr).unwrap(), harvested_power(e, &l, &s, &ch, &thr).unwrap(), 1e-10));
        }
        for t in 0..2 {
            prop_assert!(rel_close(beampattern_gain(t, &d, &s, &ch).unwrap(), beampattern_gain(t, &l, &s, &ch).unwrap(), 1e-10));
        }
        prop_assert!(rel_close(d.total_power(), l.total_power(), 1e-12));
    }

    #[test]
    fn powers_scale_quadratically(seed in any::<u64>(), c in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = channels(&mut rng, 0.0);
        let s = star(&mut rng);
        let thr = thresholds();
        let ws: Vec<CVector> = (0..2).map(|_| cvec(M, &mut rng)).collect();
        let d = TransmitDesign::from_vectors(ws.clone(), CMatrix::zeros(M, M));
        let dc = TransmitDesign::from_vectors(ws.iter().map(|w| w * C64::new(c, 0.0)).collect(), CMatrix::zeros(M, M));
        for e in 0..2 {
            prop_assert!(rel_close(harvested_power(e, &dc, &s, &ch, &thr).unwrap(), c * c * harvested_power(e, &d, &s, &ch, &thr).unwrap(), 1e-12));
        }
        for t in 0..2 {
            prop_assert!(rel_close(beampattern_gain(t, &dc, &s, &ch).unwrap(), c * c * beampattern_gain(t, &d, &s, &ch).unwrap(), 1e-12));
        }
    }

    #[test]
    fn rate_decreases_with_noise(seed in any::<u64>(), n1 in 0.01f64..1.0, gap in 0.01f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = channels(&mut rng, 0.0);
        let s = star(&mut rng);
        let d = vector_design(&mut rng, 2);
        let side = s.side(ch.ir_side[0]);
        let lo = ir_rate_with(0, &ch.h_hat[0], side, &d, n1).unwrap();
        let hi = ir_rate_with(0, &ch.h_hat[0], side, &d, n1 + gap).unwrap();
        prop_assert!(hi < lo);
    }
}
