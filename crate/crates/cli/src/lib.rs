//! File formats, configuration and subcommands behind the `facewarp` binary.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use error::{CliError, Result};
