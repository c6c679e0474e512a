use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use memscreen_core::game::GameError;
use serde_json::json;
use thiserror::Error;

use crate::flow::DecisionError;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("session not found")]
    SessionNotFound,
    #[error("{0}")]
    NotReady(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{message}")]
    Validation { message: String, fields: Vec<String> },
    #[error("image exceeds {limit} bytes")]
    TooLarge { limit: usize },
    #[error("{0}")]
    UnsupportedMedia(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn invalid(message: impl Into<String>, fields: &[&str]) -> Self {
        ApiError::Validation {
            message: message.into(),
            fields: fields.iter().map(|f| f.to_string()).collect(),
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::SessionNotFound | ApiError::NotReady(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Validation { .. } => StatusCode::BAD_REQUEST,
            ApiError::TooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            ApiError::UnsupportedMedia(_) => StatusCode::UNSUPPORTED_MEDIA_TYPE,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ApiError::SessionNotFound => "session_not_found",
            ApiError::NotReady(_) => "not_ready",
            ApiError::Conflict(_) => "conflict",
            ApiError::Validation { .. } => "invalid_request",
            ApiError::TooLarge { .. } => "payload_too_large",
            ApiError::UnsupportedMedia(_) => "unsupported_media_type",
            ApiError::Internal(_) => "internal",
        }
    }
}

impl From<GameError> for ApiError {
    fn from(e: GameError) -> Self {
        match e {
            GameError::CardOutOfRange { .. } => ApiError::invalid(e.to_string(), &["card_index"]),
            GameError::InvalidPrediction(_) => ApiError::invalid(e.to_string(), &["prediction"]),
            GameError::UnknownLevel(_) => ApiError::invalid(e.to_string(), &["level"]),
            GameError::InvalidConfig(_) | GameError::Log { .. } => ApiError::Internal(e.to_string()),
            GameError::Terminal(_)
            | GameError::PhaseConflict { .. }
            | GameError::Sequence { .. }
            | GameError::CardUnavailable(_)
            | GameError::TimeRegression { .. } => ApiError::Conflict(e.to_string()),
        }
    }
}

impl From<DecisionError> for ApiError {
    fn from(e: DecisionError) -> Self {
        match e {
            DecisionError::NotReady(_) => ApiError::NotReady(e.to_string()),
            DecisionError::Abandoned => ApiError::Conflict(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let fields = match &self {
            ApiError::Validation { fields, .. } => fields.clone(),
            _ => Vec::new(),
        };
        let body = json!({
            "error": { "code": self.code(), "message": self.to_string(), "fields": fields }
        });
        (self.status(), Json(body)).into_response()
    }
}
