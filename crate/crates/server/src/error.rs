use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use kcap_core::Error;
use serde_json::json;

/// Error half of every handler. Module errors keep their own code; the
/// remaining variants are failures of the HTTP layer itself.
#[derive(Debug)]
pub enum ApiError {
    Service(Error),
    Unauthorized,
    NotSessionOwner,
    StreamAlreadyOpen,
    MalformedRequest(String),
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::Service(e)
    }
}

pub fn status_for(e: &Error) -> StatusCode {
    use Error::*;
    match e {
        EmptyName | EmptyField(_) | InvalidFragment(_) | EmptyAnnotation | InvalidKind(_)
        | InvalidPayload(_) | EmptyQuery | RatingOutOfRange(_) | InvalidLimit
        | ReservedEventKind(_) | InvalidConfig(_) => StatusCode::BAD_REQUEST,
        RoleViolation { .. } => StatusCode::FORBIDDEN,
        UnknownActor(_) | UnknownProblem(_) | DanglingAnchor(_) | UnknownLineage(_)
        | UnknownAnnotation(_) | UnknownFixture(_) => StatusCode::NOT_FOUND,
        ExpiredSession(_) => StatusCode::GONE,
        PhaseGate(_) | TerminalPhase(_) | StaleVersion { .. } | AlreadyValidated { .. }
        | StakeLineageExists(_) | DuplicateDocument(_) => StatusCode::CONFLICT,
        QuoteMismatch { .. } | Orphaned => StatusCode::UNPROCESSABLE_ENTITY,
        CorruptLog { .. } | WriteFailure { .. } | Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::Service(e) => status_for(e),
            ApiError::Unauthorized => StatusCode::UNAUTHORIZED,
            ApiError::NotSessionOwner => StatusCode::FORBIDDEN,
            ApiError::StreamAlreadyOpen => StatusCode::CONFLICT,
            ApiError::MalformedRequest(_) => StatusCode::BAD_REQUEST,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ApiError::Service(e) => e.code(),
            ApiError::Unauthorized => "UNAUTHORIZED",
            ApiError::NotSessionOwner => "NOT_SESSION_OWNER",
            ApiError::StreamAlreadyOpen => "STREAM_ALREADY_OPEN",
            ApiError::MalformedRequest(_) => "MALFORMED_REQUEST",
        }
    }

    fn message(&self) -> String {
        match self {
            ApiError::Service(e) => e.to_string(),
            ApiError::Unauthorized => "missing or unknown bearer token".into(),
            ApiError::NotSessionOwner => "session belongs to another actor".into(),
            ApiError::StreamAlreadyOpen => "session already has an open event stream".into(),
            ApiError::MalformedRequest(m) => m.clone(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code(), "message": self.message() } });
        (self.status(), Json(body)).into_response()
    }
}
