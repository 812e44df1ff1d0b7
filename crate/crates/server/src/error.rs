use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use strataeval::corpus::CorpusError;
use strataeval::StudyError;

/// Error body returned by every endpoint: `{code, message, details}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    pub details: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status: status.as_u16(),
            code: code.into(),
            message: message.into(),
            details: Value::Null,
        }
    }

    fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_drawn(index: usize) -> Self {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "item_not_drawn",
            format!("item {index} is not in any draw"),
        )
        .with_details(json!({ "item_index": index }))
    }

    pub fn unknown_class(raw: &str) -> Self {
        ApiError::bad_request("unknown_class", format!("'{raw}' is not noun, adjective or verb"))
    }

    pub(crate) fn persist(e: StudyError) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "persist_failed", e.to_string())
    }
}

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        use StatusCode as S;
        let message = e.to_string();
        let (status, code, details) = match &e {
            StudyError::NotDrawn(index) => return ApiError::not_drawn(*index),
            StudyError::Corpus(CorpusError::IndexOutOfRange { index, .. }) => return ApiError::not_drawn(*index),
            StudyError::Unjudged { phase, remaining } => (
                S::CONFLICT,
                "unjudged_items",
                json!({
                    "phase": phase,
                    "remaining": remaining
                        .iter()
                        .map(|(class, n)| json!({ "class": class, "remaining": n }))
                        .collect::<Vec<_>>(),
                }),
            ),
            StudyError::NoFurtherPhase => (S::CONFLICT, "no_further_phase", Value::Null),
            StudyError::Closed => (S::CONFLICT, "judgments_closed", Value::Null),
            StudyError::NotReady(phase) => (S::CONFLICT, "not_ready", json!({ "phase": phase })),
            StudyError::InconsistentVerdict { index, verdict, .. } => (
                S::UNPROCESSABLE_ENTITY,
                "inconsistent_verdict",
                json!({ "item_index": index, "verdict": verdict }),
            ),
            StudyError::MissingJudge => (S::UNPROCESSABLE_ENTITY, "missing_judge", Value::Null),
            StudyError::Sampling(_) | StudyError::Estimation(_) => {
                (S::UNPROCESSABLE_ENTITY, "computation_failed", Value::Null)
            }
            StudyError::StratumTooSmall { class, size, needed } => (
                S::UNPROCESSABLE_ENTITY,
                "stratum_too_small",
                json!({ "class": class, "size": size, "needed": needed }),
            ),
            _ => (S::INTERNAL_SERVER_ERROR, "internal", Value::Null),
        };
        ApiError::new(status, code, message).with_details(details)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}
