use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unstable dynamics: spectral radius {0} is not below 1")]
    Unstable(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{solver} did not converge within {iterations} iterations (last change {change:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        change: f64,
    },

    #[error("regressors are numerically singular (condition number {condition:e})")]
    Singular { condition: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("optimizer diverged: loss {loss:e} exceeded limit {limit:e}")]
    Divergence { loss: f64, limit: f64 },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
