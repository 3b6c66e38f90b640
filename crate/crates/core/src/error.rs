//! Crate-wide error type.

/// Errors surfaced by library operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violates an operation precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Inputs are syntactically valid but lie outside the mathematical
    /// domain of the operation (zero evidence, nonpositive intensity, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// An iteration produced non-finite values or failed to converge in a
    /// way that cannot be reported as a warning.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// A file could not be parsed.
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn numeric(msg: impl Into<String>) -> Error {
    Error::Numeric(msg.into())
}
