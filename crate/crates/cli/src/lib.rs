//! Library side of the `moeflow` command-line tool.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod oracle_suite;
pub mod plot;

pub use config::{Family, Overrides, RunConfig};
pub use error::{CliError, CliResult};
