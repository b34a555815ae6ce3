use thiserror::Error;

/// Errors raised across the library. Each variant maps onto one CLI exit code.
#[derive(Debug, Error)]
pub enum SteeringError {
    #[error("unknown measurement set `{name}`; valid names: {valid}")]
    UnknownSet { name: String, valid: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric precondition violated: {0}")]
    Numeric(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SteeringError {
    /// 1 usage, 2 data/schema, 3 numeric precondition.
    pub fn exit_code(&self) -> i32 {
        match self {
            SteeringError::UnknownSet { .. } | SteeringError::InvalidArgument(_) => 1,
            SteeringError::Schema(_)
            | SteeringError::Parse { .. }
            | SteeringError::Io(_)
            | SteeringError::Json(_) => 2,
            SteeringError::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, SteeringError>;

pub(crate) fn invalid(msg: impl Into<String>) -> SteeringError {
    SteeringError::InvalidArgument(msg.into())
}

pub(crate) fn numeric(msg: impl Into<String>) -> SteeringError {
    SteeringError::Numeric(msg.into())
}
