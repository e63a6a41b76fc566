//! Library side of the `wta` command-line tool.
//!
//! Every subcommand is a plain function over its parsed arguments so the
//! integration and acceptance tests can drive them without a subprocess.

use std::fmt;

pub mod args;
pub mod commands;
pub mod timing;

pub use args::{Cli, Command};

/// A problem with the invocation rather than with the work itself. The
/// binary exits with status 2 for these and 1 for everything else.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}
