//! Experiment runner for the rmbandit library: TOML configs, CSV traces and
//! across-seed summaries.

pub mod config;
pub mod run;
pub mod summary;

pub use config::{Algorithm, Diagnostic, ExperimentConfig, Scenario};
pub use run::{run_experiment, BatchReport};
pub use summary::{mean_ci, summarize, RunCurve, SummaryStats, TraceRow};
