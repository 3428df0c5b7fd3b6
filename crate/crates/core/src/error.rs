//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong across the tensor, solver, and I/O layers.
#[derive(Error, Debug)]
pub enum Error {
    /// A shape, mode, or rank argument is structurally invalid.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two operands disagree on shape or support where they must match.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A mode index is outside `0..order`.
    #[error("mode {mode} out of range for order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    /// An iterative routine exhausted its budget without meeting its tolerance.
    #[error("{routine} failed to converge within {limit} iterations")]
    NoConvergence { routine: &'static str, limit: usize },

    /// A guard against accidentally materializing a huge dense object.
    #[error("dense tensor of {elements} elements exceeds the cap of {cap}")]
    DenseCapExceeded { elements: usize, cap: usize },

    /// Text parse failure, with the 1-based line it occurred on.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn mismatch(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, message: msg.into() }
    }
}
