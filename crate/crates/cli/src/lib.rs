//! The `pcdiag` command line: data generation, training, diagnosis,
//! targeted attacks and with/without architecture comparisons, all driven by
//! one JSON experiment config.

pub mod commands;
pub mod compare;
pub mod config;
pub mod error;

pub use compare::{cmd_compare, ComparisonRow, ComparisonTable};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
