use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nfstar_cli::runner::{draw, from_jsonl, to_jsonl};
use nfstar_cli::spec::{default_values, parse_schemes, SpecError};
use nfstar_cli::summary::to_csv;
use nfstar_cli::*;
use nfstar_core::ao::{run_baseline, AoConfig};
use nfstar_core::metrics::Thresholds;

#[derive(Parser)]
#[command(name = "nfstar", version, about = "Robust STAR-RIS beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every selected scheme on one scenario draw and dump the traces.
    Simulate(Opts),
    /// Monte-Carlo sweep over the configured axis.
    Sweep(Opts),
    /// Run the property suite.
    Verify(Opts),
    /// Re-render summaries and figures from saved records.
    Plot(Opts),
}

#[derive(Args)]
struct Opts {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed base (scenario seed for `simulate`).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated scheme names.
    #[arg(long, value_delimiter = ',')]
    scheme: Vec<String>,
    #[arg(long, value_enum)]
    axis: Option<Axis>,
    /// Comma-separated channel error levels.
    #[arg(long, value_delimiter = ',')]
    rho: Vec<f64>,
    /// Output directory (default: $NFSTAR_OUT, then ./results).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum)]
    profile: Option<Profile>,
}

enum Failure {
    Config(String),
    Verification,
    Run(String),
}

impl From<SpecError> for Failure {
    fn from(e: SpecError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn run_err(e: impl std::fmt::Display) -> Failure {
    Failure::Run(e.to_string())
}

fn build_spec(o: &Opts) -> Result<ExperimentSpec, Failure> {
    let text = match &o.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut spec = ExperimentSpec::from_toml_with_profile(&text, o.profile)?;
    if let Some(s) = o.seed {
        spec.seed_base = s;
    }
    if let Some(t) = o.trials {
        spec.trials = t;
    }
    if !o.scheme.is_empty() {
        spec.schemes = parse_schemes(&o.scheme)?;
    }
    if let Some(a) = o.axis {
        if a != spec.axis {
            spec.axis = a;
            spec.values = default_values(a);
        }
    }
    if !o.rho.is_empty() {
        spec.rho = o.rho.clone();
        spec.system.rho = o.rho[0];
    }
    if let Some(w) = o.workers {
        spec.workers = w;
    }
    if o.out.is_some() {
        spec.out = o.out.clone();
    }
    spec.validate()?;
    Ok(spec)
}

fn out_dir(spec: &ExperimentSpec) -> PathBuf {
    spec.out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| Failure::Run(format!("{}: {e}", d.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))
}

fn print_summary(summary: &Summary) {
    println!("{:<15} {:>8} {:>6} {:>7} {:>12} {:>12} {:>6} {:>6}", "scheme", "x", "rho", "lambda", "mean (W)", "std (W)", "feas", "conv");
    for r in &summary.rows {
        let x = r.sweep_value.map_or("-".to_string(), |v| v.to_string());
        println!(
            "{:<15} {:>8} {:>6} {:>7} {:>12.4e} {:>12.4e} {:>6.2} {:>6.2}",
            r.scheme.label(),
            x,
            r.rho,
            r.lambda_db,
            r.mean_harvested,
            r.std_harvested,
            r.feasible_rate,
            r.convergence_rate
        );
    }
}

fn simulate(o: &Opts) -> Result<(), Failure> {
    let spec = build_spec(o)?;
    let seed = spec.seed_base;
    let cfg = spec.system.clone();
    let thr = Thresholds::from_config(&cfg);
    let mut dump = serde_json::Map::new();
    for &scheme in &spec.schemes {
        let (sc, init) = draw(&cfg, seed, scheme).map_err(Failure::Run)?;
        let ao = AoConfig { delta0: spec.ao.delta0, r_max: spec.ao.r_max, seed, ..AoConfig::default() };
        let entry = match run_baseline(scheme, &sc, &thr, &init, &ao) {
            Ok(b) => {
                println!(
                    "{:<15} {:?} after {} iterations: xi {:.4e} W, total harvested {:.4e} W, feasible {}",
                    scheme.label(),
                    b.outcome.status,
                    b.outcome.trace.records.len(),
                    b.xi,
                    b.total_harvested,
                    b.feasible
                );
                serde_json::json!({
                    "status": b.outcome.status,
                    "xi": b.xi,
                    "total_harvested": b.total_harvested,
                    "feasible": b.feasible,
                    "trace": b.outcome.trace,
                })
            }
            Err(e) => {
                println!("{:<15} failed: {e}", scheme.label());
                serde_json::json!({ "error": e.to_string() })
            }
        };
        dump.insert(scheme.label().to_string(), entry);
    }
    let path = out_dir(&spec).join(format!("simulate_{seed}.json"));
    write(&path, &serde_json::to_string_pretty(&dump).map_err(run_err)?)?;
    println!("trace written to {}", path.display());
    Ok(())
}

fn sweep(o: &Opts) -> Result<(), Failure> {
    let spec = build_spec(o)?;
    let dir = out_dir(&spec);
    let out = run_experiment(&spec);
    write(&dir.join("spec.toml"), &spec.to_toml())?;
    write(&dir.join("records.jsonl"), &to_jsonl(&out.records))?;
    write(&dir.join("timings.jsonl"), &to_jsonl(&out.timings))?;
    let summary = aggregate(&out.records).map_err(run_err)?;
    write(&dir.join("summary.csv"), &to_csv(&summary).map_err(run_err)?)?;
    emit_plot_data(&summary, spec.axis, &dir.join("plots")).map_err(run_err)?;
    print_summary(&summary);
    println!("{} redraws ({:.1}% of draws dropped); results in {}", out.redraws, 100.0 * out.drop_rate(spec.trials), dir.display());
    Ok(())
}

fn verify_cmd(o: &Opts) -> Result<(), Failure> {
    let spec = build_spec(o)?;
    let opts = VerifyOptions {
        system: spec.system.clone(),
        seed_base: spec.seed_base,
        scenarios: o.trials.unwrap_or(VerifyOptions::default().scenarios),
        ..VerifyOptions::default()
    };
    let report = verify(&opts);
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    write(&out_dir(&spec).join("verify.json"), &serde_json::to_string_pretty(&report).map_err(run_err)?)?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn plot(o: &Opts) -> Result<(), Failure> {
    let dir = o.out.clone().or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("results"));
    let records_path = dir.join("records.jsonl");
    let text = std::fs::read_to_string(&records_path).map_err(|e| Failure::Run(format!("{}: {e}", records_path.display())))?;
    let records: Vec<TrialRecord> = from_jsonl(&text).map_err(|e| Failure::Run(format!("{}: {e}", records_path.display())))?;
    let axis = match o.axis {
        Some(a) => a,
        None => match std::fs::read_to_string(dir.join("spec.toml")) {
            Ok(t) => ExperimentSpec::from_toml(&t)?.axis,
            Err(_) => Axis::Power,
        },
    };
    let summary = aggregate(&records).map_err(run_err)?;
    write(&dir.join("summary.csv"), &to_csv(&summary).map_err(run_err)?)?;
    for p in emit_plot_data(&summary, axis, &dir.join("plots")).map_err(run_err)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(o) => simulate(o),
        Command::Sweep(o) => sweep(o),
        Command::Verify(o) => verify_cmd(o),
        Command::Plot(o) => plot(o),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(1),
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
    }
}
