//! Experiment runner for `distiag`: config files, single runs, sweeps, CSV
//! traces and SVG charts.

pub mod config;
pub mod error;
pub mod experiment;
pub mod svg;
pub mod sweep;

pub use config::{ExperimentConfig, Gamma1, Gamma2, Method};
pub use error::{CliError, CliResult};
pub use experiment::{run_experiment, Outcome, Summary};
pub use sweep::{sweep, Axis, SweepSummary};
