use thiserror::Error;

/// Errors raised by channel construction, dynamics and experiments.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A documented precondition of the operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// The requested configuration is not supported by this routine.
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// The computation would exceed a size or work limit.
    #[error("resource limit: {0}")]
    Resource(String),
    /// An internal consistency check failed.
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
