use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use banditry_core::service::ServiceError;
use serde_json::json;

use crate::api::json_response;

/// An error as it goes over the wire: `{"error": code, "message": ...}`.
#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn unauthorized() -> Self {
        Self::new(
            StatusCode::UNAUTHORIZED,
            "invalid_experiment_or_key",
            "invalid experiment id or key",
        )
    }

    pub fn admin_token() -> Self {
        Self::new(
            StatusCode::UNAUTHORIZED,
            "admin_token",
            "missing or invalid X-Admin-Token",
        )
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let code = e.code();
        let status = match code {
            "invalid_experiment_or_key" => return Self::unauthorized(),
            "not_found" => StatusCode::NOT_FOUND,
            "malformed_context" | "malformed_action" | "malformed_reward" => {
                StatusCode::BAD_REQUEST
            }
            "invalid_config" | "missing_nested" | "nesting_cycle" => StatusCode::BAD_REQUEST,
            "context_schema" | "action_schema" | "reward_schema" => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            "experiment_in_use" => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        json_response(
            self.status,
            &json!({"error": self.code, "message": self.message}),
        )
    }
}
