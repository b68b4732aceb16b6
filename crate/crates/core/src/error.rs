//! Shared error type for the whole crate.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("bisection did not reach tolerance {tol:e} within {budget} iterations (residual {residual:e})")]
    Convergence {
        tol: f64,
        budget: usize,
        residual: f64,
    },

    #[error("return time exceeded cap {cap} starting from y = {y}")]
    ReturnCapExceeded { y: f64, cap: u64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(
        "ambiguous fixed-space rank: singular value {sigma:e} within a factor 10 of threshold {threshold:e}"
    )]
    AmbiguousRank { sigma: f64, threshold: f64 },

    #[error("spectral radius {rho} has an eigenvalue too close to 1; cannot solve (I - M_H) chi = M_H V")]
    UnitEigenvalue { rho: f64 },

    #[error("iteration did not converge: {0}")]
    NoConvergence(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
