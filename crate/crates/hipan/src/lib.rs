//! File formats, run configuration and the `hipan` command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod report;

pub use error::{CliError, CliResult};
