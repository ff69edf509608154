//! The `forge` command-line harness: configuration, commands and the
//! evaluation pipeline.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

pub use commands::{run, Cli, Command};
pub use config::RunConfig;
pub use error::{exit, CliError, Result};
