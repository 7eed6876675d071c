use thiserror::Error;

/// Errors raised by the estimation toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A precondition of an operation was not met (dimensions, kinds, ordering).
    #[error("contract violation: {0}")]
    Contract(String),
    /// The innovation covariance could not be inverted reliably.
    #[error("innovation covariance is singular (condition number {condition:.3e})")]
    SingularInnovation { condition: f64 },
    /// A matrix that must be positive definite was not.
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    /// Complex-step differentiation requested for a function that cannot take complex input.
    #[error("differentiation scheme not supported: {0}")]
    UnsupportedScheme(String),
    /// Invalid estimator configuration, e.g. an invariant form paired with the wrong side.
    #[error("configuration error: {0}")]
    Configuration(String),
    /// A numerical solve failed.
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
