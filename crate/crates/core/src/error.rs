use thiserror::Error;

/// Errors raised by the library and the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation (negative or non-finite arguments).
    #[error("domain error: {0}")]
    Domain(String),
    /// Invalid model or solver parameter.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// Misuse of an API or command (empty grids, wrong model family, bad flags).
    #[error("usage error: {0}")]
    Usage(String),
    #[error("shape mismatch: expected {expected}, got {found}")]
    ShapeMismatch { expected: String, found: String },
    /// The requested operation needs a differentiable objective.
    #[error("non-smooth density: {0}")]
    NonSmooth(String),
    /// The optimizer could not make progress.
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
