//! Library surface of the command-line front end, exposed so the
//! integration and acceptance suites drive the same code paths as the
//! binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use error::{CliError, ConfigIssue, Result};
