//! Batch front-end for the dispersion toolkit.

pub mod config;
pub mod output;
pub mod runner;

pub use config::{Command, ConfigError, Format, RunConfig};
pub use output::{Document, Table};
pub use runner::{run, Outcome, RunError};
