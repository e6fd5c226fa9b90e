use thiserror::Error;

/// Errors raised by the schedule, model, operator and optimization layers.
#[derive(Debug, Error)]
pub enum SirError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("non-finite value in {context} (outer iteration {iteration})")]
    NonFinite { context: String, iteration: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SirError>;

pub(crate) fn invalid(msg: impl Into<String>) -> SirError {
    SirError::InvalidParameter(msg.into())
}
