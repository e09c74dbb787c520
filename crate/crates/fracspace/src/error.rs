//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes of model construction, filtering, and estimation.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates a documented precondition (dimension mismatch,
    /// out-of-range order, empty input, ...).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A parameter vector describes a model outside the admissible region
    /// (unstable AR root, |correlation| >= 1, nonpositive variance, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The memory parameter fell outside the tabulated grid.
    #[error("memory parameter d = {d} outside table range [{lo}, {hi}]")]
    TableRange { d: f64, lo: f64, hi: f64 },

    /// An innovation covariance lost positive definiteness beyond repair.
    #[error("filter failure at t = {t}: {reason}")]
    Filter { t: usize, reason: String },

    /// The ECM linear system is singular; the named parameter directions are
    /// not identified by the expected complete-data likelihood.
    #[error("rank-deficient ECM system; unidentified directions: {0}")]
    RankDeficient(String),

    /// An optimizer exhausted its iteration budget without satisfying its
    /// convergence test, in a context where the result cannot be used.
    #[error("optimization failed: {0}")]
    Optim(String),

    /// Malformed model-spec / study-config / table-cache content.
    #[error("parse error: {0}")]
    Parse(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
