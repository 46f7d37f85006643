//! The end-to-end training loop, its configuration, metrics and outputs.

mod config;
mod metrics;
pub mod output;
mod run;

pub use config::{ExperimentConfig, Scenario, StreamSpec};
pub use metrics::{acc_metric, bwt_metric, evaluate, evaluate_features, AccuracyMatrix};
pub use run::{build_stream, run_experiment, RunFailure, RunResult};
