use thiserror::Error;

pub type Result<T, E = LithoError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LithoError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("eigensolver did not converge on a {0}x{0} matrix")]
    Eigen(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LithoError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        LithoError::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        LithoError::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        LithoError::Data(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        LithoError::Format(msg.into())
    }
}
