//! Command-line front end: configs, artifacts and subcommands.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

pub use error::{CliError, Result};
