use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use hype_core::HypeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] HypeError),

    #[error("{0} not found")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    /// A request arrived for a sequence number other than the outstanding one.
    #[error("out of sequence: expected {expected}, got {got}")]
    Sequence { expected: u64, got: u64 },

    /// The session or run accepts no further requests.
    #[error("{0}")]
    Terminal(String),

    #[error("bad request: {0}")]
    BadRequest(String),

    /// A response log that cannot be replayed; `offset` is the byte offset of the first bad line.
    #[error("corrupt log at byte {offset} (line {line}): {reason}")]
    Corrupt { offset: u64, line: usize, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, ServiceError>;

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::Core(e) => match e {
                HypeError::Unqualified(_) => StatusCode::FORBIDDEN,
                HypeError::BetweenSubjects { .. } => StatusCode::CONFLICT,
                HypeError::State(_) => StatusCode::CONFLICT,
                HypeError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
                _ => StatusCode::UNPROCESSABLE_ENTITY,
            },
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) | ServiceError::Sequence { .. } => StatusCode::CONFLICT,
            ServiceError::Terminal(_) => StatusCode::GONE,
            ServiceError::BadRequest(_) | ServiceError::Csv(_) => StatusCode::BAD_REQUEST,
            ServiceError::Json(_) => StatusCode::BAD_REQUEST,
            ServiceError::Corrupt { .. } | ServiceError::Io(_) | ServiceError::Config(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            ServiceError::Core(HypeError::Unqualified(_)) => "unqualified",
            ServiceError::Core(HypeError::BetweenSubjects { .. }) => "between_subjects",
            ServiceError::Core(HypeError::State(_)) => "state",
            ServiceError::Core(_) => "invalid",
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Sequence { .. } => "sequence",
            ServiceError::Terminal(_) => "terminal",
            ServiceError::BadRequest(_) | ServiceError::Json(_) | ServiceError::Csv(_) => "bad_request",
            ServiceError::Corrupt { .. } => "corrupt_log",
            ServiceError::Io(_) | ServiceError::Config(_) => "internal",
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}
