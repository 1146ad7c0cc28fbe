//! Command-line experiment harness: config parsing, runs, sweeps and reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod records;
pub mod report;
pub mod sweep;

pub use config::RunConfig;
pub use error::{CliError, ConfigError};
