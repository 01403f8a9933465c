//! The `headswap` command-line harness: synthetic data generation, training,
//! swapping, evaluation and weight-map visualization.

pub mod cli;
pub mod commands;
pub mod error;
pub mod settings;

pub use error::{CliError, CliResult, ErrorKind};
pub use settings::Settings;
