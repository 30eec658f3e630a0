//! JSON error bodies: `{"error": code, "detail": text}`.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use ndp_core::NdpError;
use serde_json::json;

#[derive(Clone, Debug, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub detail: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, detail: impl Into<String>) -> Self {
        ApiError { status, code, detail: detail.into() }
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no {what} with id {id:?}"))
    }

    pub fn bad_request(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", detail)
    }

    pub fn episode_complete(step: usize, horizon: usize) -> Self {
        Self::new(StatusCode::CONFLICT, "episode_complete", format!("episode complete after {step} of {horizon} steps"))
    }

    pub fn invalid_action(state: usize, action: usize, available: usize) -> Self {
        Self::new(
            StatusCode::BAD_REQUEST,
            "invalid_action",
            format!("state {state} has {available} actions; {action} is out of range"),
        )
    }

    pub fn not_suggested(action: usize, suggested: &[usize]) -> Self {
        Self::new(
            StatusCode::CONFLICT,
            "not_suggested",
            format!("action {action} is outside the suggestion set {suggested:?}; resend with allow_override to take it anyway"),
        )
    }
}

impl From<NdpError> for ApiError {
    fn from(e: NdpError) -> Self {
        let code = match &e {
            NdpError::InvalidMdp(_) => "invalid_mdp",
            NdpError::InvalidEpsilon { .. } => "invalid_epsilon",
            NdpError::NegativeReward { .. } => "negative_reward",
            NdpError::NotDag { .. } => "not_dag",
            NdpError::Format(_) => "invalid_request",
            _ => "domain_error",
        };
        let status = if code == "invalid_request" { StatusCode::BAD_REQUEST } else { StatusCode::UNPROCESSABLE_ENTITY };
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "detail": self.detail }))).into_response()
    }
}
