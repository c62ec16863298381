use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not conform for the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// An API contract was violated (e.g. backward from a non-scalar node).
    #[error("contract violation: {0}")]
    Contract(String),
    /// An iterative solver failed to converge.
    #[error("convergence failure: {0}")]
    Convergence(String),
    /// Malformed file contents.
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
