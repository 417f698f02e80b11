//! Experiment harness: scenario configuration, seeded Monte-Carlo sweeps,
//! summaries, plot data and the property suite.

pub mod plot;
pub mod runner;
pub mod spec;
pub mod summary;
pub mod verify;

pub use plot::emit_plot_data;
pub use runner::{run_experiment, ExperimentOutput, TrialRecord};
pub use spec::{Axis, ExperimentSpec, Profile};
pub use summary::{aggregate, Summary};
pub use verify::{verify, VerifyOptions, VerifyReport};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "NFSTAR_OUT";
