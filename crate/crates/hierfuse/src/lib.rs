//! File formats, configuration, parallel execution and the command
//! implementations behind the `hierfuse` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod io;

pub use error::{exit, CliError};
