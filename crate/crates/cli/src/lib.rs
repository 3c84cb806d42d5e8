//! Command layer of the simulation toolkit: experiment configs in, CSV tables
//! and static SVG charts out.
//!
//! Everything the `mvsde` binary can do is callable as a library function so
//! the whole pipeline stays testable; `main.rs` only parses arguments and
//! maps errors to exit codes (0 ok, 2 configuration error, 3 numerical
//! failure).

// Validation sites use `!(x > 0)` on purpose: the negation also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod csvfmt;
pub mod plot;

/// Command-layer error with the exit-code split the CLI contract wants.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, bad input file, unusable arguments: exit code 2.
    Config(String),
    /// The numerics failed (solver divergence, non-finite data where finite
    /// data is required): exit code 3.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Numerical(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<mvsde::Error> for CliError {
    fn from(err: mvsde::Error) -> Self {
        if err.is_config() {
            CliError::Config(err.to_string())
        } else {
            CliError::Numerical(err.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Config(format!("i/o: {err}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
