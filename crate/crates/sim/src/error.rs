use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario schema error at line {line}, column {column}: {message}")]
    Schema { line: usize, column: usize, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("rejected command: {0}")]
    Command(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
    #[error("trace error: {0}")]
    Trace(String),
    #[error(transparent)]
    Core(#[from] skyframe_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type SimResult<T> = std::result::Result<T, SimError>;
