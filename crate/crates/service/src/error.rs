// SPDX-License-Identifier: Apache-2.0

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

/// Failures while opening the pool or the rating log.
#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("pool line {line}: {message}")]
    Pool { line: usize, message: String },
    #[error("rating log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;

/// Request-level failures, mapped onto HTTP status codes.
#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("no task pool is loaded")]
    NoPool,
    #[error("unknown example {0:?}")]
    UnknownExample(String),
    #[error("rater {rater_id:?} already rated {example_id:?}")]
    Duplicate {
        rater_id: String,
        example_id: String,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("storage failure: {0}")]
    Storage(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NoPool => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::UnknownExample(_) => StatusCode::NOT_FOUND,
            ApiError::Duplicate { .. } => StatusCode::CONFLICT,
            ApiError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(json!({ "error": self.to_string() }))).into_response()
    }
}
