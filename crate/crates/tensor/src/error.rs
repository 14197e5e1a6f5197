use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("contract error: {0}")]
    Contract(String),
}

impl TensorError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        TensorError::Dimension(msg.into())
    }
}
