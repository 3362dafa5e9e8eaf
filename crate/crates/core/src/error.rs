use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid argument to {op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("{0}: backward called before forward")]
    BackwardBeforeForward(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("container format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

impl CoreError {
    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        CoreError::InvalidArgument { op, msg: msg.into() }
    }
}
