//! Configuration, run bookkeeping and reporting behind the `gfflab` binary.

pub mod config;
pub mod manifest;
pub mod report;

use std::fmt;

/// Exit code of a successful run.
pub const EXIT_OK: i32 = 0;
/// A verification ran but did not pass.
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_INSUFFICIENT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Validation { key: String, message: String },
    Core(gff_core::Error),
    Io(std::io::Error),
    CheckFailed(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation { key, message } => write!(f, "invalid `{key}`: {message}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
            CliError::CheckFailed(m) => write!(f, "check failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use gff_core::Error as E;
        match self {
            CliError::Validation { .. } | CliError::Io(_) => EXIT_VALIDATION,
            CliError::CheckFailed(_) => EXIT_CHECK_FAILED,
            CliError::Core(e) => match e {
                E::Domain(_) | E::Planning(_) | E::Io(_) | E::Json(_) => EXIT_VALIDATION,
                E::Insufficient(_) | E::Fit(_) => EXIT_INSUFFICIENT,
                E::Numeric(_) | E::Convergence { .. } => EXIT_NUMERIC,
            },
        }
    }
}

impl From<gff_core::Error> for CliError {
    fn from(e: gff_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation {
            key: "<json>".into(),
            message: e.to_string(),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}
