//! Config-driven experiment runner for covariance root finding.
//!
//! A TOML file names a task, an expectation provider, an optimiser and a
//! seed list; [`experiments::run`] executes the ensemble and writes traces,
//! a `summary.json` and, for sweeps, a `sweep.csv` table.

pub mod config;
pub mod error;
pub mod experiments;
pub mod summary;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use experiments::{run, Report};
pub use summary::{RunSummary, SeedRow};
