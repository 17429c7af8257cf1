use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use samtrack_core::backends::BackendError;
use samtrack_core::pipeline::PipelineError;
use serde::{Deserialize, Serialize};

/// Error response: `{"code": ..., "message": ..., "frame_index": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_index: Option<usize>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.to_string(),
            message: message.into(),
            frame_index: None,
        }
    }

    pub fn at_frame(mut self, frame_index: usize) -> Self {
        self.frame_index = Some(frame_index);
        self
    }

    pub fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "UnknownSession", format!("no session {id}"))
    }

    pub fn conflict(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "MalformedRequest", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

fn backend_status(e: &BackendError) -> StatusCode {
    match e {
        BackendError::NoPrompt | BackendError::OutOfBounds { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        BackendError::Config(_) => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::BAD_GATEWAY,
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::InvalidConfig(_) => StatusCode::UNPROCESSABLE_ENTITY,
            PipelineError::UnknownStage(_) => StatusCode::NOT_FOUND,
            PipelineError::Backend(b) => backend_status(b),
            PipelineError::Mask(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::CONFLICT,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<BackendError> for ApiError {
    fn from(e: BackendError) -> Self {
        ApiError::new(backend_status(&e), e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}
