//! Experiment commands behind the `hamsde` binary.

pub mod config;
pub mod error;
pub mod experiments;
pub mod models;
pub mod repro;
pub mod sweep;

pub use config::{Command, Config};
pub use error::{CliError, CliResult};
