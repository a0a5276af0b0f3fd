use std::convert::Infallible;

use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::{extract::Path, Json};
use futures::stream::{self, Stream, StreamExt};
use kcap_core::annotation::{Anchor, Annotation, AnnotationDraft, AttributePair, ResolvedSpan, ThreadNode};
use kcap_core::awareness::{Availability, AwarenessEvent, EventKind, RosterEntry, Session};
use kcap_core::domain::{Actor, DecisionProblem, Document, EiPhase, Role};
use kcap_core::exploitation::{CaseMatch, CaseQuery, FeedbackRecord, IndicatorReport, Recommendation, VocabularyReport};
use kcap_core::fixture::FixtureSummary;
use kcap_core::ids::{ActorId, AnnotationId, DocUri, DpId, KrId, KrRef, SessionId};
use kcap_core::repository::{HistoryEntry, KnowledgeResource, KrKind, Repository};
use kcap_core::service::StakeVersion;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::catalogue::{Endpoint, CATALOGUE};
use crate::{ApiError, AppState, Body, Caller, Params};

type Reply<T> = Result<Json<T>, ApiError>;

fn ok<T>(value: T) -> Reply<T> {
    Ok(Json(value))
}

fn new_token() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

#[derive(Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub last_seq: u64,
}

pub async fn health(State(app): State<AppState>) -> Reply<Health> {
    ok(Health {
        status: "ok".into(),
        last_seq: app.service().last_seq(),
    })
}

pub async fn list_catalogue() -> Json<&'static [Endpoint]> {
    Json(CATALOGUE)
}

// ---- actors and problems ----

#[derive(Deserialize)]
pub struct RegisterActor {
    display_name: String,
    role: Role,
}

#[derive(Serialize)]
pub struct Registration {
    actor: Actor,
    token: String,
}

pub async fn register_actor(State(app): State<AppState>, Body(req): Body<RegisterActor>) -> Result<(StatusCode, Json<Registration>), ApiError> {
    let token = new_token();
    let actor = app.service().register_actor_with_token(&req.display_name, req.role, &token)?;
    Ok((StatusCode::CREATED, Json(Registration { actor, token })))
}

pub async fn list_actors(State(app): State<AppState>) -> Reply<Vec<Actor>> {
    ok(app.service().actors())
}

pub async fn get_actor(State(app): State<AppState>, Path(id): Path<String>) -> Reply<Actor> {
    ok(app.service().actor(&ActorId::new(id))?)
}

pub async fn authenticate(Caller(actor): Caller) -> Reply<Actor> {
    ok(actor)
}

#[derive(Deserialize)]
pub struct CreateProblem {
    title: String,
    initial_demand: String,
    #[serde(default)]
    internal_context: String,
    #[serde(default)]
    external_context: String,
}

pub async fn create_decision_problem(State(app): State<AppState>, Caller(me): Caller, Body(req): Body<CreateProblem>) -> Reply<DecisionProblem> {
    ok(app.service().create_decision_problem(
        &me.actor_id,
        &req.title,
        &req.initial_demand,
        &req.internal_context,
        &req.external_context,
    )?)
}

pub async fn list_problems(State(app): State<AppState>) -> Reply<Vec<DecisionProblem>> {
    ok(app.service().problems())
}

pub async fn get_problem(State(app): State<AppState>, Path(dp): Path<String>) -> Reply<DecisionProblem> {
    ok(app.service().problem(&DpId::new(dp))?)
}

#[derive(Deserialize)]
pub struct DefineStake {
    observed_object: String,
    signal: String,
    hypothesis: String,
}

pub async fn define_stake(State(app): State<AppState>, Caller(me): Caller, Path(dp): Path<String>, Body(req): Body<DefineStake>) -> Reply<StakeVersion> {
    ok(app.service().define_stake(&me.actor_id, &DpId::new(dp), &req.observed_object, &req.signal, &req.hypothesis)?)
}

pub async fn current_stake(State(app): State<AppState>, Path(dp): Path<String>) -> Reply<Option<StakeVersion>> {
    ok(app.service().current_stake(&DpId::new(dp))?)
}

#[derive(Serialize, Deserialize)]
pub struct PhaseAdvanced {
    pub dp_id: DpId,
    pub phase: EiPhase,
}

pub async fn advance_phase(State(app): State<AppState>, Caller(me): Caller, Path(dp): Path<String>) -> Reply<PhaseAdvanced> {
    let dp_id = DpId::new(dp);
    let phase = app.service().advance_phase(&me.actor_id, &dp_id)?;
    ok(PhaseAdvanced { dp_id, phase })
}

// ---- documents and annotations ----

#[derive(Deserialize)]
pub struct AddDocument {
    #[serde(default)]
    dp_id: Option<DpId>,
    #[serde(default)]
    doc_uri: Option<DocUri>,
    content: String,
}

pub async fn add_document(State(app): State<AppState>, Caller(me): Caller, Body(req): Body<AddDocument>) -> Reply<Document> {
    ok(app.service().add_document(&me.actor_id, req.dp_id.as_ref(), req.doc_uri, &req.content)?)
}

#[derive(Deserialize)]
pub struct DocumentQuery {
    uri: DocUri,
}

pub async fn get_document(State(app): State<AppState>, Params(q): Params<DocumentQuery>) -> Reply<Document> {
    ok(app.service().document(&q.uri)?)
}

#[derive(Deserialize)]
pub struct CreateAnnotation {
    anchor: Anchor,
    #[serde(flatten)]
    draft: AnnotationDraft,
}

pub async fn create_annotation(State(app): State<AppState>, Caller(me): Caller, Path(dp): Path<String>, Body(req): Body<CreateAnnotation>) -> Reply<Annotation> {
    ok(app.service().create_annotation(&me.actor_id, &DpId::new(dp), &req.anchor, req.draft)?)
}

pub async fn annotations_for(State(app): State<AppState>, Path(dp): Path<String>) -> Reply<Vec<Annotation>> {
    ok(app.service().annotations_for(&DpId::new(dp))?)
}

pub async fn get_annotation(State(app): State<AppState>, Path(id): Path<String>) -> Reply<Annotation> {
    ok(app.service().annotation(&AnnotationId::new(id))?)
}

pub async fn follow_up(State(app): State<AppState>, Caller(me): Caller, Path(id): Path<String>, Body(draft): Body<AnnotationDraft>) -> Reply<Annotation> {
    ok(app.service().follow_up(&me.actor_id, &AnnotationId::new(id), draft)?)
}

#[derive(Deserialize)]
pub struct ReuseAnnotation {
    anchor: Anchor,
    #[serde(default)]
    body: Option<String>,
    #[serde(default)]
    attributes: Option<Vec<AttributePair>>,
}

pub async fn reuse_annotation(State(app): State<AppState>, Caller(me): Caller, Path(id): Path<String>, Body(req): Body<ReuseAnnotation>) -> Reply<Annotation> {
    ok(app.service().reuse_annotation(&me.actor_id, &AnnotationId::new(id), &req.anchor, req.body, req.attributes)?)
}

pub async fn list_thread(State(app): State<AppState>, Path(id): Path<String>) -> Reply<ThreadNode> {
    ok(app.service().list_thread(&AnnotationId::new(id))?)
}

pub async fn annotation_lineage(State(app): State<AppState>, Path(id): Path<String>) -> Reply<Vec<Annotation>> {
    ok(app.service().annotation_lineage(&AnnotationId::new(id))?)
}

#[derive(Deserialize)]
pub struct ResolveAnchor {
    anchor: Anchor,
    content: String,
}

pub async fn resolve_anchor(State(app): State<AppState>, Body(req): Body<ResolveAnchor>) -> Reply<ResolvedSpan> {
    ok(app.service().resolve_anchor(&req.anchor, &req.content)?)
}

// ---- repository ----

#[derive(Deserialize)]
pub struct Declare {
    kind: KrKind,
    dp_id: DpId,
    payload: Value,
}

pub async fn declare(State(app): State<AppState>, Caller(me): Caller, Body(req): Body<Declare>) -> Reply<KnowledgeResource> {
    ok(app.service().declare(&me.actor_id, req.kind, req.payload, &req.dp_id)?)
}

#[derive(Deserialize)]
pub struct AppendVersion {
    payload: Value,
}

pub async fn append_version(State(app): State<AppState>, Caller(me): Caller, Path(kr): Path<String>, Body(req): Body<AppendVersion>) -> Reply<KnowledgeResource> {
    ok(app.service().append_version(&me.actor_id, &KrId::new(kr), req.payload)?)
}

pub async fn get_resource(State(app): State<AppState>, Path((kr, version)): Path<(String, u32)>) -> Reply<KnowledgeResource> {
    ok(app.service().knowledge_resource(&KrRef::new(KrId::new(kr), version))?)
}

pub async fn validate(State(app): State<AppState>, Caller(me): Caller, Path((kr, version)): Path<(String, u32)>) -> Reply<KnowledgeResource> {
    ok(app.service().validate(&me.actor_id, &KrId::new(kr), version)?)
}

pub async fn get_history(State(app): State<AppState>, Path(kr): Path<String>) -> Reply<Vec<HistoryEntry>> {
    ok(app.service().get_history(&KrId::new(kr))?)
}

pub async fn snapshot_at(State(app): State<AppState>, Path(seq): Path<u64>) -> Reply<Repository> {
    ok(app.service().snapshot_at(seq))
}

// ---- exploitation ----

pub async fn explore(State(app): State<AppState>) -> Reply<VocabularyReport> {
    ok(app.service().explore())
}

pub async fn query(State(app): State<AppState>, Body(q): Body<CaseQuery>) -> Reply<Vec<CaseMatch>> {
    ok(app.service().query(&q)?)
}

#[derive(Deserialize)]
pub struct Scope {
    #[serde(default)]
    dp_id: Option<DpId>,
}

pub async fn analyze(State(app): State<AppState>, Params(scope): Params<Scope>) -> Reply<IndicatorReport> {
    ok(app.service().analyze(scope.dp_id.as_ref())?)
}

#[derive(Deserialize)]
pub struct RecordFeedback {
    kr: KrRef,
    rating: i64,
    #[serde(default)]
    new_problem: Option<DpId>,
    #[serde(default)]
    comment: Option<String>,
}

pub async fn record_feedback(State(app): State<AppState>, Caller(me): Caller, Body(req): Body<RecordFeedback>) -> Reply<FeedbackRecord> {
    ok(app.service().record_feedback(&me.actor_id, &req.kr, req.rating, req.new_problem, req.comment)?)
}

#[derive(Deserialize)]
pub struct Limit {
    #[serde(default = "default_limit")]
    limit: usize,
}

fn default_limit() -> usize {
    10
}

pub async fn recommend(State(app): State<AppState>, Caller(me): Caller, Params(q): Params<Limit>) -> Reply<Vec<Recommendation>> {
    ok(app.service().recommend(&me.actor_id, q.limit)?)
}

// ---- awareness ----

#[derive(Serialize, Deserialize)]
pub struct Joined {
    pub session: Session,
    pub backlog: u64,
    pub high_water: u64,
}

pub async fn join(State(app): State<AppState>, Caller(me): Caller, Path(dp): Path<String>) -> Reply<Joined> {
    let ticket = app.service().join(&me.actor_id, &DpId::new(dp))?;
    app.park(ticket.session.session_id.clone(), ticket.receiver, ticket.high_water);
    ok(Joined {
        session: ticket.session,
        backlog: ticket.backlog,
        high_water: ticket.high_water,
    })
}

fn owned_session(app: &AppState, me: &Actor, id: &SessionId) -> Result<Session, ApiError> {
    let session = app
        .service()
        .session(id)
        .ok_or_else(|| kcap_core::Error::ExpiredSession(id.clone()))?;
    if session.actor != me.actor_id {
        return Err(ApiError::NotSessionOwner);
    }
    Ok(session)
}

#[derive(Deserialize)]
pub struct Heartbeat {
    availability: Availability,
}

#[derive(Serialize, Deserialize)]
pub struct HeartbeatAck {
    pub changed: bool,
}

pub async fn heartbeat(State(app): State<AppState>, Caller(me): Caller, Path(id): Path<String>, Body(req): Body<Heartbeat>) -> Reply<HeartbeatAck> {
    let id = SessionId::new(id);
    owned_session(&app, &me, &id)?;
    ok(HeartbeatAck {
        changed: app.service().heartbeat(&id, req.availability)?,
    })
}

pub async fn leave(State(app): State<AppState>, Caller(me): Caller, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let id = SessionId::new(id);
    match owned_session(&app, &me, &id) {
        Err(ApiError::NotSessionOwner) => return Err(ApiError::NotSessionOwner),
        _ => {
            app.service().leave(&id);
            app.unpark(&id);
        }
    }
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
pub struct After {
    #[serde(default)]
    after: Option<u64>,
}

/// Leaves the session when its event stream is dropped.
struct LeaveOnDrop {
    app: AppState,
    session: SessionId,
}

impl Drop for LeaveOnDrop {
    fn drop(&mut self) {
        self.app.service().leave(&self.session);
    }
}

pub fn frame(event: &AwarenessEvent) -> Event {
    let kind = match event.kind {
        EventKind::Presence => "presence",
        EventKind::Workspace => "workspace",
        EventKind::Activity => "activity",
    };
    let frame = Event::default()
        .event(kind)
        .data(serde_json::to_string(event).expect("events serialize"));
    if event.is_sequenced() {
        frame.id(event.event_id.to_string())
    } else {
        frame
    }
}

pub async fn subscribe(
    State(app): State<AppState>,
    Caller(me): Caller,
    Path(id): Path<String>,
    Params(q): Params<After>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let id = SessionId::new(id);
    let session = owned_session(&app, &me, &id)?;
    let pending = app.unpark(&id).ok_or(ApiError::StreamAlreadyOpen)?;
    // Persisted events up to the join point; the live channel carries the rest.
    let replayed = match q.after {
        Some(after) => app
            .service()
            .replay_since(&session.workspace, after)?
            .into_iter()
            .filter(|e| e.event_id <= pending.high_water)
            .collect(),
        None => Vec::new(),
    };
    let guard = LeaveOnDrop { app: app.clone(), session: id };
    let live = stream::unfold((pending.receiver, guard), |(mut rx, guard)| async move {
        rx.recv().await.map(|e| (e, (rx, guard)))
    });
    let events = stream::iter(replayed).chain(live).map(|e| Ok(frame(&e))).fuse();
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

#[derive(Deserialize)]
pub struct PublishEvent {
    #[serde(default = "workspace_kind")]
    kind: EventKind,
    payload: String,
}

fn workspace_kind() -> EventKind {
    EventKind::Workspace
}

pub async fn publish_event(State(app): State<AppState>, Caller(me): Caller, Path(dp): Path<String>, Body(req): Body<PublishEvent>) -> Reply<AwarenessEvent> {
    ok(app.service().publish_event(req.kind, &me.actor_id, &DpId::new(dp), &req.payload)?)
}

pub async fn replay_since(State(app): State<AppState>, Path(dp): Path<String>, Params(q): Params<After>) -> Reply<Vec<AwarenessEvent>> {
    ok(app.service().replay_since(&DpId::new(dp), q.after.unwrap_or(0))?)
}

pub async fn presence_roster(State(app): State<AppState>, Path(dp): Path<String>) -> Reply<Vec<RosterEntry>> {
    ok(app.service().presence_roster(&DpId::new(dp))?)
}

// ---- operator ----

pub async fn seed_fixture(State(app): State<AppState>, Path(name): Path<String>) -> Reply<FixtureSummary> {
    let tokens = [new_token(), new_token(), new_token()];
    ok(app.service().seed_fixture(&name, Some(tokens))?)
}

pub async fn export_log(State(app): State<AppState>, Params(scope): Params<Scope>) -> Result<impl IntoResponse, ApiError> {
    let entries = app.service().export_entries(scope.dp_id.as_ref())?;
    let body: String = entries.iter().map(|e| e.to_line()).collect();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body))
}
