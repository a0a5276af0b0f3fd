//! The endpoint catalogue. Routes, the `/api/catalogue` response and
//! `docs/API.md` are all generated from [`CATALOGUE`].

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    GET,
    POST,
    DELETE,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Endpoint {
    pub operation: &'static str,
    pub method: Method,
    pub path: &'static str,
    /// Whether a bearer token is required.
    pub auth: bool,
    pub request: &'static str,
    pub response: &'static str,
    pub summary: &'static str,
}

const fn ep(
    operation: &'static str,
    method: Method,
    path: &'static str,
    auth: bool,
    request: &'static str,
    response: &'static str,
    summary: &'static str,
) -> Endpoint {
    Endpoint { operation, method, path, auth, request, response, summary }
}

use Method::*;

pub const CATALOGUE: &[Endpoint] = &[
    ep("health", GET, "/api/health", false, "-", "Health", "Liveness probe with the latest log sequence number."),
    ep("catalogue", GET, "/api/catalogue", false, "-", "Endpoint[]", "This catalogue."),
    // actors and problems
    ep("register_actor", POST, "/api/actors", false, "RegisterActor", "Registration", "Registers an actor and issues its bearer token."),
    ep("list_actors", GET, "/api/actors", false, "-", "Actor[]", "All registered actors."),
    ep("get_actor", GET, "/api/actors/{actor_id}", false, "-", "Actor", "One actor."),
    ep("authenticate", GET, "/api/me", true, "-", "Actor", "The actor owning the bearer token."),
    ep("create_decision_problem", POST, "/api/problems", true, "CreateProblem", "DecisionProblem", "Declares a decision problem with its initial demand document."),
    ep("list_problems", GET, "/api/problems", false, "-", "DecisionProblem[]", "All decision problems."),
    ep("get_problem", GET, "/api/problems/{dp_id}", false, "-", "DecisionProblem", "One decision problem."),
    ep("define_stake", POST, "/api/problems/{dp_id}/stake", true, "DefineStake", "StakeVersion", "Defines the stake, or appends a new stake version."),
    ep("current_stake", GET, "/api/problems/{dp_id}/stake", false, "-", "StakeVersion | null", "Newest stake version."),
    ep("advance_phase", POST, "/api/problems/{dp_id}/phase", true, "-", "PhaseAdvanced", "Moves the problem to its next phase."),
    // documents and annotations
    ep("add_document", POST, "/api/documents", true, "AddDocument", "Document", "Stores an annotatable document."),
    ep("get_document", GET, "/api/documents", false, "?uri=<doc_uri>", "Document", "One document by URI."),
    ep("create_annotation", POST, "/api/problems/{dp_id}/annotations", true, "CreateAnnotation", "Annotation", "Anchors a new annotation on a document, fragment or annotation."),
    ep("annotations_for", GET, "/api/problems/{dp_id}/annotations", false, "-", "Annotation[]", "Annotations of a workspace in creation order."),
    ep("get_annotation", GET, "/api/annotations/{annotation_id}", false, "-", "Annotation", "One annotation."),
    ep("follow_up", POST, "/api/annotations/{annotation_id}/replies", true, "AnnotationDraft", "Annotation", "Replies to an annotation."),
    ep("reuse_annotation", POST, "/api/annotations/{annotation_id}/reuse", true, "ReuseAnnotation", "Annotation", "Copies an annotation onto a new anchor."),
    ep("list_thread", GET, "/api/annotations/{annotation_id}/thread", false, "-", "ThreadNode", "Reply tree rooted at an annotation."),
    ep("annotation_lineage", GET, "/api/annotations/{annotation_id}/lineage", false, "-", "Annotation[]", "Reuse chain from the annotation back to its origin."),
    ep("resolve_anchor", POST, "/api/anchors/resolve", false, "ResolveAnchor", "ResolvedSpan", "Relocates an anchor in edited content."),
    // repository
    ep("declare", POST, "/api/resources", true, "Declare", "KnowledgeResource", "Starts a Declaration or StakeDefinition lineage."),
    ep("append_version", POST, "/api/resources/{kr_id}/versions", true, "AppendVersion", "KnowledgeResource", "Appends a version to a lineage."),
    ep("get_resource", GET, "/api/resources/{kr_id}/versions/{version}", false, "-", "KnowledgeResource", "One version of a lineage."),
    ep("validate", POST, "/api/resources/{kr_id}/versions/{version}/validate", true, "-", "KnowledgeResource", "Validates the newest version of a lineage."),
    ep("get_history", GET, "/api/resources/{kr_id}/history", false, "-", "HistoryEntry[]", "Every version with its status timeline."),
    ep("snapshot_at", GET, "/api/snapshots/{seq}", false, "-", "Repository", "Repository as it stood at a sequence number."),
    // exploitation
    ep("explore", GET, "/api/explore", false, "-", "VocabularyReport", "Attribute vocabulary and resource counts."),
    ep("query", POST, "/api/query", false, "CaseQuery", "CaseMatch[]", "Case retrieval with score breakdowns."),
    ep("analyze", GET, "/api/analyze", false, "?dp_id=<dp_id>", "IndicatorReport", "Indicators and evolution series."),
    ep("record_feedback", POST, "/api/feedback", true, "RecordFeedback", "FeedbackRecord", "Rates a resource version."),
    ep("recommend", GET, "/api/recommendations", true, "?limit=<n>", "Recommendation[]", "Recommendations for the caller."),
    // awareness
    ep("join", POST, "/api/problems/{dp_id}/sessions", true, "-", "Joined", "Opens an awareness session in a workspace."),
    ep("heartbeat", POST, "/api/sessions/{session_id}/heartbeat", true, "Heartbeat", "HeartbeatAck", "Keeps a session alive and sets availability."),
    ep("leave", DELETE, "/api/sessions/{session_id}", true, "-", "-", "Closes a session."),
    ep("subscribe", GET, "/api/sessions/{session_id}/events", true, "?after=<event_id>", "event stream of AwarenessEvent", "Replays persisted events after `after`, then streams live events."),
    ep("publish_event", POST, "/api/problems/{dp_id}/events", true, "PublishEvent", "AwarenessEvent", "Publishes a Workspace event."),
    ep("replay_since", GET, "/api/problems/{dp_id}/events", false, "?after=<event_id>", "AwarenessEvent[]", "Persisted workspace events after an id."),
    ep("presence_roster", GET, "/api/problems/{dp_id}/roster", false, "-", "RosterEntry[]", "Who is present in a workspace."),
    // operator
    ep("seed_fixture", POST, "/api/fixtures/{name}", false, "-", "FixtureSummary", "Seeds a named scenario and returns its bearer tokens."),
    ep("export_log", GET, "/api/export", false, "?dp_id=<dp_id>", "newline-delimited LogEntry", "Log records in log order."),
];

pub fn find(operation: &str) -> Option<&'static Endpoint> {
    CATALOGUE.iter().find(|e| e.operation == operation)
}

pub const DOC_START: &str = "<!-- catalogue:start -->";
pub const DOC_END: &str = "<!-- catalogue:end -->";

/// Markdown table placed between the catalogue markers of `docs/API.md`.
pub fn render_markdown() -> String {
    let mut out = String::from("| Operation | Method | Path | Auth | Request | Response | Description |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for e in CATALOGUE {
        out.push_str(&format!(
            "| `{}` | {:?} | `{}` | {} | {} | {} | {} |\n",
            e.operation,
            e.method,
            e.path,
            if e.auth { "bearer" } else { "-" },
            e.request,
            e.response,
            e.summary
        ));
    }
    out
}
