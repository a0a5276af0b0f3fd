use std::path::PathBuf;

use crate::ids::{ActorId, AnnotationId, DpId, KrId, SessionId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the service can report. Each variant maps to one stable
/// machine-readable code via [`Error::code`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("display name must not be blank")]
    EmptyName,
    #[error("field `{0}` must not be blank")]
    EmptyField(&'static str),
    #[error("actor {actor} with role {role} may not {action}")]
    RoleViolation {
        actor: ActorId,
        role: crate::domain::Role,
        action: &'static str,
    },
    #[error("unknown actor {0}")]
    UnknownActor(ActorId),
    #[error("unknown decision problem {0}")]
    UnknownProblem(DpId),
    #[error("phase gate closed: {0}")]
    PhaseGate(String),
    #[error("decision problem {0} is already in its terminal phase")]
    TerminalPhase(DpId),
    #[error("anchor target {0} does not exist")]
    DanglingAnchor(String),
    #[error("quote mismatch: expected {expected:?}, found {found:?}")]
    QuoteMismatch { expected: String, found: String },
    #[error("invalid fragment: {0}")]
    InvalidFragment(String),
    #[error("annotation needs a body or at least one attribute")]
    EmptyAnnotation,
    #[error("annotation anchor is orphaned: context quote not found")]
    Orphaned,
    #[error("document {0} already exists")]
    DuplicateDocument(String),
    #[error("unknown knowledge resource lineage {0}")]
    UnknownLineage(KrId),
    #[error("{kr_id} v{version} is not the newest version (newest is v{newest})")]
    StaleVersion {
        kr_id: KrId,
        version: u32,
        newest: u32,
    },
    #[error("{kr_id} v{version} is already validated")]
    AlreadyValidated { kr_id: KrId, version: u32 },
    #[error("kind {0} cannot be written through this operation")]
    InvalidKind(crate::repository::KrKind),
    #[error("decision problem {0} already has a stake lineage")]
    StakeLineageExists(DpId),
    #[error("malformed payload: {0}")]
    InvalidPayload(String),
    #[error("query must set at least one of role, phase, terms, dp_scope")]
    EmptyQuery,
    #[error("rating {0} is outside 1..=5")]
    RatingOutOfRange(i64),
    #[error("limit must be at least 1")]
    InvalidLimit,
    #[error("session {0} has expired or does not exist")]
    ExpiredSession(SessionId),
    #[error("event kind {0} is reserved for the service")]
    ReservedEventKind(crate::awareness::EventKind),
    #[error("unknown annotation {0}")]
    UnknownAnnotation(AnnotationId),
    #[error("unknown fixture {0:?}")]
    UnknownFixture(String),
    #[error("corrupt log at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("write to {path} failed: {source}")]
    WriteFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable, distinct code for each error kind.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyName => "EMPTY_NAME",
            Error::EmptyField(_) => "EMPTY_FIELD",
            Error::RoleViolation { .. } => "ROLE_VIOLATION",
            Error::UnknownActor(_) => "UNKNOWN_ACTOR",
            Error::UnknownProblem(_) => "UNKNOWN_PROBLEM",
            Error::PhaseGate(_) => "PHASE_GATE",
            Error::TerminalPhase(_) => "TERMINAL_PHASE",
            Error::DanglingAnchor(_) => "DANGLING_ANCHOR",
            Error::QuoteMismatch { .. } => "QUOTE_MISMATCH",
            Error::InvalidFragment(_) => "INVALID_FRAGMENT",
            Error::EmptyAnnotation => "EMPTY_ANNOTATION",
            Error::Orphaned => "ORPHANED",
            Error::DuplicateDocument(_) => "DUPLICATE_DOCUMENT",
            Error::UnknownLineage(_) => "UNKNOWN_LINEAGE",
            Error::StaleVersion { .. } => "STALE_VERSION",
            Error::AlreadyValidated { .. } => "ALREADY_VALIDATED",
            Error::InvalidKind(_) => "INVALID_KIND",
            Error::StakeLineageExists(_) => "STAKE_LINEAGE_EXISTS",
            Error::InvalidPayload(_) => "INVALID_PAYLOAD",
            Error::EmptyQuery => "EMPTY_QUERY",
            Error::RatingOutOfRange(_) => "RATING_OUT_OF_RANGE",
            Error::InvalidLimit => "INVALID_LIMIT",
            Error::ExpiredSession(_) => "EXPIRED_SESSION",
            Error::ReservedEventKind(_) => "RESERVED_EVENT_KIND",
            Error::UnknownAnnotation(_) => "UNKNOWN_ANNOTATION",
            Error::UnknownFixture(_) => "UNKNOWN_FIXTURE",
            Error::CorruptLog { .. } => "CORRUPT_LOG",
            Error::InvalidConfig(_) => "INVALID_CONFIG",
            Error::WriteFailure { .. } => "WRITE_FAILURE",
            Error::Io(_) => "IO",
        }
    }
}
