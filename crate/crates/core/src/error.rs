use thiserror::Error;

/// Errors raised by the samplers, solvers and estimators.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A linear solve or factorization failed.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An iterative or quadrature method did not reach the requested bound.
    #[error("no convergence: achieved error bound {achieved:.3e}, requested {requested:.3e}")]
    Convergence { achieved: f64, requested: f64 },

    /// A run was rejected before sampling started (memory, feasibility).
    #[error("planning error: {0}")]
    Planning(String),

    /// Too few usable replicas or scales for the requested statistic.
    #[error("insufficient data: {0}")]
    Insufficient(String),

    /// Exponent regression could not be performed.
    #[error("fit error: {0}")]
    Fit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
