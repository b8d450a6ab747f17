//! Experiment harness: configuration, metrics, run directories, the ablation
//! matrix and the command-line front end.

pub mod cli;
pub mod config;
pub mod metrics;
pub mod report;
pub mod run;

pub use config::ExperimentConfig;
pub use report::{evaluate, stratified_evaluate, EvalSplit, MetricsReport, StratumMae};
pub use run::{ablation_matrix, evaluate_run, train_run, SplitName};
