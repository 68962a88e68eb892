//! Error type shared by the solver core.

/// Errors produced by operators, mirror maps, step rules and the engines.
#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed operator container: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, SolverError>;

impl SolverError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        SolverError::InvalidArgument(msg.into())
    }
}
