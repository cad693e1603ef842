//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two vectors (or a vector and a model) disagree on dimension.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    /// A non-finite parameter appeared while iterating.
    #[error("diverged at round {round}{}", client.map(|c| format!(" (client {c})")).unwrap_or_default())]
    Divergence { round: usize, client: Option<usize> },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// A configuration value violated a range constraint.
    #[error("{0}")]
    Validation(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            found,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Process exit code for the command-line front end: 2 for runs that
    /// diverged or failed to converge, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } | Error::NoConvergence { .. } | Error::NumericOverflow(_) => 2,
            _ => 1,
        }
    }
}
