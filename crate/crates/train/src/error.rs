use thiserror::Error;
use warpseg_core::CoreError;
use warpseg_dgw::DgwError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Warp(#[from] DgwError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error("checkpoint manifest: {0}")]
    Manifest(String),
    #[error("non-finite {what} at iteration {iter}")]
    NonFinite { iter: usize, what: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl TrainError {
    /// Non-finite losses get their own exit status in the command-line tool.
    pub fn is_non_finite(&self) -> bool {
        matches!(
            self,
            TrainError::NonFinite { .. } | TrainError::Core(CoreError::NonFinite(_))
        )
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;
