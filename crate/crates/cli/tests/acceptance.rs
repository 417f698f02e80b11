//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! a tally. Exits 0 either way so the workspace test run stays green; the
//! lines themselves are the verdict.

use std::time::Instant;

use nfstar_cli::runner::{run_experiment, to_jsonl, TrialRecord};
use nfstar_cli::spec::{Axis, ExperimentSpec, Profile};
use nfstar_cli::verify::{
    hermitian_embedding, kron_identity, mutation_control, rank_gap_tail, robust_designs, s_procedure_soundness,
    zero_radius_consistency, Check, VerifyOptions,
};
use nfstar_core::ao::BaselineKind;
use nfstar_core::metrics::Thresholds;

const TRIALS: usize = 20;
const TIE: f64 = 1e-3;

struct Line {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
    secs: f64,
}

fn report(lines: &mut Vec<Line>, id: usize, name: &'static str, start: Instant, passed: bool, detail: String) {
    let l = Line { id, name, passed, detail, secs: start.elapsed().as_secs_f64() };
    println!("{} {}: {} ({:.1}s) {}", if l.passed { "PASS" } else { "FAIL" }, l.id, l.name, l.secs, l.detail);
    lines.push(l);
}

fn join(checks: &[Check]) -> (bool, String) {
    let passed = checks.iter().all(|c| c.passed);
    let detail = checks.iter().map(|c| format!("[{}: {}]", c.name, c.detail)).collect::<Vec<_>>().join(" ");
    (passed, detail)
}

fn base_spec() -> ExperimentSpec {
    let mut s = ExperimentSpec::for_profile(Profile::Desk);
    s.system.rho = 0.0;
    s.rho = vec![0.0];
    s.trials = TRIALS;
    s.seed_base = 0;
    s.workers = 1;
    s
}

fn sweep(axis: Axis, values: &[f64], rho: &[f64], schemes: &[BaselineKind]) -> Vec<TrialRecord> {
    let mut s = base_spec();
    s.axis = axis;
    s.values = values.to_vec();
    s.rho = rho.to_vec();
    s.schemes = schemes.to_vec();
    s.validate().expect("acceptance specs are valid");
    run_experiment(&s).records
}

fn pick(records: &[TrialRecord], scheme: BaselineKind, value: f64, rho: f64) -> Vec<&TrialRecord> {
    records.iter().filter(|r| r.scheme == scheme && r.sweep_value == Some(value) && r.rho == rho).collect()
}

fn mean(rs: &[&TrialRecord]) -> f64 {
    rs.iter().map(|r| r.delivered).sum::<f64>() / rs.len().max(1) as f64
}

fn sci(xs: &[f64]) -> String {
    format!("[{}]", xs.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", "))
}

/// Non-strict monotonicity with a relative tie band.
fn ordered(xs: &[f64], increasing: bool) -> bool {
    xs.windows(2).all(|w| {
        let band = TIE * w[0].abs().max(w[1].abs());
        if increasing {
            w[1] >= w[0] - band
        } else {
            w[1] <= w[0] + band
        }
    })
}

fn main() {
    let mut lines = Vec::new();

    let t = Instant::now();
    let (ok, detail) = join(&[kron_identity(100, 1), hermitian_embedding(100, 2), rank_gap_tail(100, 3)]);
    let fast = t.elapsed().as_secs_f64() < 10.0;
    report(&mut lines, 1, "algebraic identities", t, ok && fast, detail);

    let t = Instant::now();
    let mut robust = VerifyOptions::default();
    robust.system = Profile::Desk.system();
    robust.system.rho = 0.02;
    robust.scenarios = 5;
    robust.samples = 10_000;
    let designs = robust_designs(&robust);
    let mut checks = vec![s_procedure_soundness(&designs, robust.samples), mutation_control(&robust, 2_000)];
    if designs.is_empty() {
        checks.push(Check { name: "designs".into(), passed: false, detail: "no robust design solved".into() });
    }
    let (ok, detail) = join(&checks);
    let fast = t.elapsed().as_secs_f64() < 600.0;
    report(&mut lines, 2, "robust constraints hold under sampled errors", t, ok && fast, detail);

    let t = Instant::now();
    let mut zero = VerifyOptions::default();
    zero.system = Profile::Desk.system();
    zero.scenarios = 5;
    let (ok, detail) = join(&[zero_radius_consistency(&zero)]);
    report(&mut lines, 3, "zero-radius robust program matches nominal", t, ok, detail);

    // Shared Monte-Carlo runs for the remaining criteria.
    let t_runs = Instant::now();
    let compare = sweep(Axis::Power, &[10.0], &[0.0], &BaselineKind::ALL);
    let power = sweep(Axis::Power, &[1.0, 2.0, 5.0], &[0.0], &[BaselineKind::Proposed]);
    let rate = sweep(Axis::Rate, &[1.0, 3.0], &[0.0], &[BaselineKind::Proposed]);
    let hard = sweep(Axis::Power, &[10.0], &[0.02, 0.1], &[BaselineKind::Proposed]);
    let runs_secs = t_runs.elapsed().as_secs_f64();
    println!("     shared sweeps took {runs_secs:.1}s");

    let nominal = pick(&compare, BaselineKind::Proposed, 10.0, 0.0);

    let t = Instant::now();
    let feasible: Vec<_> = nominal.iter().filter(|r| r.feasible).collect();
    let tight = feasible.iter().filter(|r| !r.eigen_ratios.is_empty() && r.eigen_ratios.iter().all(|e| *e <= 1e-4)).count();
    let frac = tight as f64 / feasible.len().max(1) as f64;
    report(
        &mut lines,
        4,
        "relaxation returns rank-one solutions",
        t,
        !feasible.is_empty() && frac >= 0.9,
        format!("{tight}/{} feasible runs with every eigenvalue ratio <= 1e-4", feasible.len()),
    );

    let t = Instant::now();
    let mut bad = Vec::new();
    let mut audited = 0;
    for r in nominal.iter().copied().chain(pick(&hard, BaselineKind::Proposed, 10.0, 0.02)).filter(|r| r.converged) {
        let mut cfg = base_spec().system;
        cfg.p_max = 10.0;
        cfg.rho = r.rho;
        let thr = Thresholds::from_config(&cfg);
        audited += 1;
        let ir = r.ir_rates.iter().all(|x| *x >= thr.r_th - 1e-3) && !r.ir_rates.is_empty();
        let eve = r.worst_eve_rate.is_some_and(|x| x <= thr.r_eth + 1e-3);
        let bp = r.min_beampattern.is_some_and(|x| x >= thr.lambda_gain * (1.0 - 1e-5));
        let pw = r.power_used.is_some_and(|x| x <= thr.p_max * (1.0 + 1e-6));
        let beta = r.beta_residual.is_some_and(|x| x <= 1e-6);
        if !(ir && eve && bp && pw && beta) {
            bad.push(format!("trial {} rho {}: ir={ir} eve={eve} gain={bp} power={pw} beta={beta}", r.trial, r.rho));
        }
    }
    report(
        &mut lines,
        5,
        "converged designs satisfy every constraint",
        t,
        audited > 0 && bad.is_empty(),
        format!("{audited} designs audited; {}", if bad.is_empty() { "no violations".into() } else { bad.join("; ") }),
    );

    let t = Instant::now();
    let conv = nominal.iter().filter(|r| r.converged).count();
    let frac = conv as f64 / nominal.len().max(1) as f64;
    let iters: Vec<usize> = nominal.iter().map(|r| r.outer_iterations).collect();
    report(
        &mut lines,
        6,
        "alternating loop converges within the iteration cap",
        t,
        frac >= 0.9,
        format!("{conv}/{} converged ({:.0}%); outer iterations {iters:?}", nominal.len(), 100.0 * frac),
    );

    let t = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;
    for scheme in BaselineKind::ALL.into_iter().filter(|k| *k != BaselineKind::Proposed) {
        let other = pick(&compare, scheme, 10.0, 0.0);
        let wins = nominal
            .iter()
            .zip(&other)
            .filter(|(p, o)| p.delivered >= o.delivered * (1.0 - TIE))
            .count();
        let paired = nominal.len() == other.len() && nominal.iter().zip(&other).all(|(p, o)| p.channel_digest == o.channel_digest);
        let m = mean(&other);
        let pass = paired && mean(&nominal) >= m * (1.0 - TIE) && wins as f64 >= 0.7 * nominal.len() as f64;
        ok &= pass;
        notes.push(format!("vs {}: mean {:.3e} W, wins {wins}/{}", scheme.label(), m, nominal.len()));
    }
    let p_means: Vec<f64> = [1.0, 2.0, 5.0]
        .iter()
        .map(|v| mean(&pick(&power, BaselineKind::Proposed, *v, 0.0)))
        .chain([mean(&nominal)])
        .collect();
    let rate_at = |v: f64| mean(&pick(&rate, BaselineKind::Proposed, v, 0.0));
    // The comparison runs use the default rate requirement of 2 bit/s/Hz.
    let r_means = vec![rate_at(1.0), mean(&nominal), rate_at(3.0)];
    let h_means = vec![
        mean(&nominal),
        mean(&pick(&hard, BaselineKind::Proposed, 10.0, 0.02)),
        mean(&pick(&hard, BaselineKind::Proposed, 10.0, 0.1)),
    ];
    let trends = ordered(&p_means, true) && ordered(&r_means, false) && ordered(&h_means, false);
    ok &= trends;
    notes.push(format!("proposed mean {:.3e} W", mean(&nominal)));
    notes.push(format!("power trend {}", sci(&p_means)));
    notes.push(format!("rate trend {}", sci(&r_means)));
    notes.push(format!("rho trend {}", sci(&h_means)));
    report(&mut lines, 7, "proposed design dominates baselines with expected trends", t, ok, notes.join("; "));

    let t = Instant::now();
    let small = || {
        let mut s = base_spec();
        s.values = vec![10.0];
        s.trials = 2;
        s.schemes = vec![BaselineKind::Proposed, BaselineKind::NoSensing];
        to_jsonl(&run_experiment(&s).records)
    };
    let (a, b) = (small(), small());
    report(&mut lines, 8, "repeat runs are byte identical", t, !a.is_empty() && a == b, format!("{} bytes", a.len()));

    let passed = lines.iter().filter(|l| l.passed).count();
    println!("acceptance: {passed}/{} criteria passed", lines.len());
    for l in lines.iter().filter(|l| !l.passed) {
        println!("  failed {}: {}", l.id, l.name);
    }
}
