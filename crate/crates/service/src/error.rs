use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use corrseg::Error;
use serde::Serialize;

/// Error body: `{"error": code, "detail": text}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub error: &'static str,
    pub detail: String,
}

impl ApiError {
    pub fn new(status: StatusCode, error: &'static str, detail: impl Into<String>) -> Self {
        Self {
            status,
            error,
            detail: detail.into(),
        }
    }

    pub fn not_found(error: &'static str, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, error, detail)
    }

    pub fn unprocessable(error: &'static str, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, error, detail)
    }

    pub fn conflict(error: &'static str, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, error, detail)
    }

    pub fn internal(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", detail)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let detail = e.to_string();
        match e.root() {
            Error::OutOfBounds { .. } => Self::unprocessable("out_of_bounds", detail),
            Error::DuplicatePrompt { .. } => Self::unprocessable("duplicate_prompt", detail),
            Error::NoPositivePrompts => Self::conflict("no_positive_prompts", detail),
            Error::UnknownModel(_) => Self::unprocessable("unknown_model", detail),
            Error::MissingFile(_) | Error::Io { .. } | Error::Decode(_) | Error::Unsupported(_) => {
                Self::unprocessable("unreadable_input", detail)
            }
            Error::NoFeatures { .. } | Error::Geometry(_) | Error::ChannelMismatch { .. } => {
                Self::unprocessable("features_unavailable", detail)
            }
            Error::Endpoint(_) | Error::MalformedResponse(_) | Error::Predictor(_) => {
                Self::new(StatusCode::BAD_GATEWAY, "upstream_failed", detail)
            }
            Error::InvalidArgument(_) | Error::LengthMismatch(_) | Error::InvalidDimensions(_) => {
                Self::unprocessable("invalid_argument", detail)
            }
            _ => Self::internal(detail),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(e.status(), "invalid_body", e.body_text())
    }
}

impl From<PathRejection> for ApiError {
    fn from(e: PathRejection) -> Self {
        Self::new(e.status(), "invalid_path", e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::new(e.status(), "invalid_query", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
