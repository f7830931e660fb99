//! Scenario configuration, experiment orchestration and result files.

pub mod config;
pub mod ellipse;
pub mod experiment;
pub mod io;
pub mod rate;
pub mod repro;
pub mod sweep;
pub mod verify;

pub use config::{Estimator, ScenarioConfig};
pub use experiment::{run_experiment, Experiment, ExperimentReport, RunMetrics, RunRecord};
pub use io::Dataset;
