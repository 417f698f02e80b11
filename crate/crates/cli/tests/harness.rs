use nfstar_cli::plot::emit_plot_data;
use nfstar_cli::runner::{from_jsonl, run_experiment, to_jsonl, TrialRecord};
use nfstar_cli::spec::{Axis, ExperimentSpec, Profile, SpecError};
use nfstar_cli::summary::{aggregate, mean_std, to_csv};
use nfstar_core::ao::BaselineKind;
use proptest::prelude::*;

fn tiny(schemes: Vec<BaselineKind>) -> ExperimentSpec {
    let mut s = ExperimentSpec::for_profile(Profile::Desk);
    s.system.rho = 0.0;
    s.rho = vec![0.0];
    s.values = vec![10.0];
    s.trials = 1;
    s.audit_samples = 20;
    s.schemes = schemes;
    s
}

#[test]
fn toml_overrides_merge_into_profile() {
    let s = ExperimentSpec::from_toml("axis = \"rate\"\ntrials = 3\n[system]\nrho = 0.0\n").unwrap();
    assert_eq!(s.axis, Axis::Rate);
    assert_eq!(s.values, vec![1.0, 2.0, 3.0]);
    assert_eq!(s.trials, 3);
    assert_eq!(s.system.rho, 0.0);
    assert_eq!(s.system.bs_antennas, Profile::Desk.system().bs_antennas);
    let back = ExperimentSpec::from_toml(&s.to_toml()).unwrap();
    assert_eq!(back, s);
}

#[test]
fn bad_configs_are_rejected() {
    assert!(matches!(ExperimentSpec::from_toml("trials = \"x\""), Err(SpecError::Parse(_))));
    assert!(matches!(ExperimentSpec::from_toml("bogus = 1"), Err(SpecError::Parse(_))));
    assert!(matches!(ExperimentSpec::from_toml("trials = 0"), Err(SpecError::Invalid(_))));
    assert!(matches!(ExperimentSpec::from_toml("values = [2.0, 1.0]"), Err(SpecError::Invalid(_))));
    assert!(matches!(ExperimentSpec::from_toml("schemes = [\"magic\"]"), Err(SpecError::Invalid(_))));
    assert!(matches!(ExperimentSpec::from_toml("axis = \"iter\"\nvalues = [1.0]"), Err(SpecError::Invalid(_))));
    assert!(matches!(ExperimentSpec::from_toml("rho = [-0.1]"), Err(SpecError::Invalid(_))));
}

#[test]
fn points_cover_the_grid() {
    let mut s = ExperimentSpec::for_profile(Profile::Desk);
    s.values = vec![1.0, 2.0];
    s.rho = vec![0.0, 0.1, 0.2];
    assert_eq!(s.points().len(), 6);
    let p = s.points()[5];
    let cfg = s.system_at(&p);
    assert_eq!((cfg.p_max, cfg.rho), (2.0, 0.2));
}

#[test]
fn mean_std_small_cases() {
    assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    assert_eq!(mean_std(&[3.0, 3.0]), (3.0, 0.0));
    let (m, s) = mean_std(&[1.0, 2.0, 6.0]);
    assert!((m - 3.0).abs() < 1e-15);
    assert!((s - 7f64.sqrt()).abs() < 1e-15);
}

proptest! {
    #[test]
    fn std_is_shift_invariant(xs in prop::collection::vec(-1e3f64..1e3, 1..20), c in -1e3f64..1e3) {
        let (m, s) = mean_std(&xs);
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let (m2, s2) = mean_std(&shifted);
        prop_assert!(s >= 0.0);
        prop_assert!((m2 - m - c).abs() <= 1e-9 * (1.0 + m.abs() + c.abs()));
        prop_assert!((s2 - s).abs() <= 1e-8 * (1.0 + s));
    }
}

#[test]
fn one_trial_one_scheme_one_point() {
    let out = run_experiment(&tiny(vec![BaselineKind::Proposed]));
    assert_eq!(out.records.len(), 1);
    assert_eq!(out.timings.len(), 1);
    let r = &out.records[0];
    assert!(r.feasible, "{:?}", r.error);
    assert!(r.delivered > 0.0);
    assert_eq!(r.harvested_trace.len(), r.outer_iterations);

    let summary = aggregate(&out.records).unwrap();
    assert_eq!(summary.rows.len(), 1);
    assert_eq!(summary.rows[0].std_harvested, 0.0);
    assert_eq!(summary.rows[0].mean_harvested, r.delivered);
    assert!(to_csv(&summary).unwrap().lines().count() == 2);

    let text = to_jsonl(&out.records);
    let back: Vec<TrialRecord> = from_jsonl(&text).unwrap();
    assert_eq!(to_jsonl(&back), text);
}

#[test]
fn schemes_share_each_draw_and_plots_are_written() {
    let out = run_experiment(&tiny(vec![BaselineKind::Proposed, BaselineKind::Sdr, BaselineKind::NoSensing]));
    assert_eq!(out.records.len(), 3);
    let d = &out.records[0].channel_digest;
    assert!(!d.is_empty());
    assert!(out.records.iter().all(|r| &r.channel_digest == d && r.seed == out.records[0].seed));

    let mut twice = out.records.clone();
    twice.extend(out.records.iter().cloned());
    let summary = aggregate(&twice).unwrap();
    assert_eq!(summary.rows.len(), 3);
    assert!(summary.rows.iter().all(|r| r.trials == 2 && r.std_harvested == 0.0));

    let dir = std::env::temp_dir().join(format!("nfstar-plot-{}", std::process::id()));
    let files = emit_plot_data(&summary, Axis::Power, &dir).unwrap();
    assert_eq!(files.len(), 4);
    assert!(files.iter().all(|f| f.exists()));
    let svg = std::fs::read_to_string(dir.join("power.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    let curves = emit_plot_data(&summary, Axis::Iter, &dir).unwrap();
    assert_eq!(curves.len(), 4);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn empty_records_do_not_aggregate() {
    assert!(aggregate(&[]).is_err());
}

#[test]
fn nominal_oracle_matches_relaxed_program_at_zero_radius() {
    use nfstar_cli::runner::draw;
    use nfstar_cli::verify::nominal_optimum;
    use nfstar_core::active::{solve_relaxed, ActiveConfig};
    use nfstar_core::metrics::Thresholds;
    use nfstar_core::robust::{AssemblyOptions, ZeroRadius};

    let mut cfg = Profile::Desk.system();
    cfg.rho = 0.0;
    let thr = Thresholds::from_config(&cfg);
    let (sc, init) = draw(&cfg, 0, BaselineKind::Proposed).unwrap();
    let q = [&init.t.q, &init.r.q];
    let oracle = nominal_optimum(&sc.channels, &thr, q, true).unwrap().expect("draw 0 is feasible");
    for zero_radius in [ZeroRadius::Scalar, ZeroRadius::Lmi] {
        let ac = ActiveConfig { assembly: AssemblyOptions { zero_radius, mutation: None }, ..ActiveConfig::default() };
        let xi = solve_relaxed(&sc.channels, &thr, q, &ac).unwrap().xi;
        assert!((oracle - xi).abs() <= 1e-4 * oracle, "{zero_radius:?}: {oracle} vs {xi}");
    }
}
