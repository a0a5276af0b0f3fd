//! The knowledge service: every operation of every module, backed by one
//! append-only log.
//!
//! An operation checks its preconditions against the current state and
//! plans the log entries it will append. The entries are written to the log
//! file first and then applied to the in-memory state through the same
//! [`State::apply`] that replays a log at startup, so a rebuilt service is
//! identical to the one that wrote the log.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::annotation::{
    self, Anchor, Annotation, AnnotationDraft, AnnotationStore, AttributePair,
    ResolvedSpan, ThreadNode,
};
use crate::awareness::{
    Availability, AwarenessEvent, AwarenessHub, Clock, EventKind, JoinTicket, RosterEntry,
    SystemClock, WorkspaceLogs,
};
use crate::config::ServiceConfig;
use crate::domain::{require_text, Actor, DecisionProblem, Document, EiPhase, Role, Stake};
use crate::error::{Error, Result};
use crate::exploitation::{
    self, CaseMatch, CaseQuery, FeedbackPayload, FeedbackRecord, IndicatorReport, Recommendation,
    VocabularyReport,
};
use crate::ids::{ActorId, AnnotationId, DocUri, DpId, KrId, KrRef, SessionId};
use crate::log::{self, ActorRecord, LogBody, LogEntry, LogWriter};
use crate::repository::{
    HistoryEntry, KnowledgeResource, KrKind, RepoEntry, Repository, TemporalStamp,
};

/// Everything rebuilt from the log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub actors: BTreeMap<ActorId, Actor>,
    pub tokens: BTreeMap<String, ActorId>,
    pub documents: BTreeMap<DocUri, Document>,
    pub problems: BTreeMap<DpId, DecisionProblem>,
    pub stake_lineages: BTreeMap<DpId, KrId>,
    pub annotations: AnnotationStore,
    pub repository: Repository,
    pub workspaces: WorkspaceLogs,
    pub last_seq: u64,
    #[serde(skip)]
    feedback_lineages: BTreeMap<(ActorId, KrRef), KrId>,
}

impl State {
    /// Applies one log entry. An error means the entry is inconsistent with
    /// the state built so far.
    pub fn apply(&mut self, entry: &LogEntry) -> Result<(), String> {
        if entry.seq <= self.last_seq {
            return Err(format!("sequence {} does not follow {}", entry.seq, self.last_seq));
        }
        let stamped = |stamp: &TemporalStamp| {
            if stamp.seq == entry.seq {
                Ok(())
            } else {
                Err(format!("record stamp {} differs from entry seq {}", stamp.seq, entry.seq))
            }
        };
        match &entry.body {
            LogBody::Actor(record) => {
                let id = record.actor.actor_id.clone();
                if self.actors.contains_key(&id) {
                    return Err(format!("duplicate actor {id}"));
                }
                if let Some(hash) = &record.token_hash {
                    self.tokens.insert(hash.clone(), id.clone());
                }
                self.actors.insert(id, record.actor.clone());
            }
            LogBody::Document(doc) => {
                stamped(&doc.created_at)?;
                if self.documents.contains_key(&doc.doc_uri) {
                    return Err(format!("duplicate document {}", doc.doc_uri));
                }
                if !doc.hash_matches() {
                    return Err(format!("content hash mismatch for {}", doc.doc_uri));
                }
                self.documents.insert(doc.doc_uri.clone(), doc.clone());
            }
            LogBody::Problem(dp) => {
                stamped(&dp.created_at)?;
                if self.problems.contains_key(&dp.dp_id) {
                    return Err(format!("duplicate problem {}", dp.dp_id));
                }
                match self.actors.get(&dp.created_by) {
                    Some(a) if a.role == Role::DecisionMaker => {}
                    _ => return Err(format!("{} not created by a decision maker", dp.dp_id)),
                }
                if !self.documents.contains_key(&dp.initial_demand) {
                    return Err(format!("{} has no initial demand document", dp.dp_id));
                }
                self.workspaces.open(dp.dp_id.clone());
                self.problems.insert(dp.dp_id.clone(), dp.clone());
            }
            LogBody::Annotation(ann) => {
                stamped(&ann.t_a)?;
                if !self.actors.contains_key(&ann.author) {
                    return Err(format!("{} has unknown author", ann.annotation_id));
                }
                self.annotations.apply(ann.clone())?;
            }
            LogBody::Kr(repo_entry) => {
                if repo_entry.seq() != entry.seq {
                    return Err(format!("record seq {} differs from entry seq {}", repo_entry.seq(), entry.seq));
                }
                if let RepoEntry::Version(row) = repo_entry {
                    if !self.problems.contains_key(&row.dp_id) {
                        return Err(format!("{} refers to unknown {}", row.kr_id, row.dp_id));
                    }
                    match self.actors.get(&row.author) {
                        Some(a) if row.kind.role_permits(a.role) && a.role == row.author_role => {}
                        _ => return Err(format!("{} v{} fails its role gate", row.kr_id, row.version)),
                    }
                }
                self.repository.apply(repo_entry.clone())?;
                if let RepoEntry::Version(row) = repo_entry {
                    self.index_version(row)?;
                }
            }
            LogBody::Awareness(event) => {
                stamped(&event.stamp)?;
                self.workspaces.record(event.clone())?;
            }
        }
        self.last_seq = entry.seq;
        Ok(())
    }

    fn index_version(&mut self, row: &KnowledgeResource) -> Result<(), String> {
        match row.kind {
            KrKind::StakeDefinition if row.version == 1 => {
                if self.stake_lineages.contains_key(&row.dp_id) {
                    return Err(format!("second stake lineage for {}", row.dp_id));
                }
                self.stake_lineages.insert(row.dp_id.clone(), row.kr_id.clone());
            }
            KrKind::Feedback if row.version == 1 => {
                let fb: FeedbackPayload = serde_json::from_value(row.payload.clone())
                    .map_err(|e| format!("bad feedback payload in {}: {e}", row.kr_id))?;
                self.feedback_lineages
                    .insert((row.author.clone(), fb.target), row.kr_id.clone());
            }
            KrKind::PhaseTransition => {
                let to: EiPhase = serde_json::from_value(row.payload["to"].clone())
                    .map_err(|e| format!("bad phase transition {}: {e}", row.kr_id))?;
                let dp = self
                    .problems
                    .get_mut(&row.dp_id)
                    .ok_or_else(|| format!("transition for unknown {}", row.dp_id))?;
                if dp.current_phase.next() != Some(to) {
                    return Err(format!("{} cannot move from {} to {to}", dp.dp_id, dp.current_phase));
                }
                dp.current_phase = to;
            }
            _ => {}
        }
        Ok(())
    }

    fn reindex(&mut self) {
        self.feedback_lineages.clear();
        let rows: Vec<KnowledgeResource> = self
            .repository
            .lineages()
            .filter(|l| l.kind == KrKind::Feedback)
            .map(|l| l.versions[0].row.clone())
            .collect();
        for row in rows {
            if let Ok(fb) = serde_json::from_value::<FeedbackPayload>(row.payload) {
                self.feedback_lineages.insert((row.author, fb.target), row.kr_id);
            }
        }
    }

    fn actor(&self, id: &ActorId) -> Result<&Actor> {
        self.actors
            .get(id)
            .ok_or_else(|| Error::UnknownActor(id.clone()))
    }

    fn problem(&self, id: &DpId) -> Result<&DecisionProblem> {
        self.problems
            .get(id)
            .ok_or_else(|| Error::UnknownProblem(id.clone()))
    }
}

/// Contents of a snapshot file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SnapshotFile {
    seq: u64,
    state: State,
}

/// The stake triple as stored in StakeDefinition payloads.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct StakeFields {
    observed_object: String,
    signal: String,
    hypothesis: String,
}

impl StakeFields {
    fn parse(payload: &Value) -> Result<Self> {
        let fields: StakeFields = serde_json::from_value(payload.clone())
            .map_err(|e| Error::InvalidPayload(format!("stake payload: {e}")))?;
        require_text("observed_object", &fields.observed_object)?;
        require_text("signal", &fields.signal)?;
        require_text("hypothesis", &fields.hypothesis)?;
        Ok(fields)
    }
}

/// A stake together with the repository version that records it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StakeVersion {
    pub stake: Stake,
    pub kr: KnowledgeResource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinSummary {
    pub session_id: SessionId,
    pub backlog: u64,
    pub high_water: u64,
}

struct Txn {
    next_seq: u64,
    now: DateTime<Utc>,
    entries: Vec<LogEntry>,
    event_ids: BTreeMap<DpId, u64>,
}

impl Txn {
    fn stamp(&mut self) -> TemporalStamp {
        let stamp = TemporalStamp::new(self.now, self.next_seq);
        self.next_seq += 1;
        stamp
    }

    fn push(&mut self, stamp: TemporalStamp, scope: Option<DpId>, body: LogBody) {
        debug_assert!(self.entries.last().is_none_or(|e| e.seq < stamp.seq));
        self.entries.push(LogEntry {
            seq: stamp.seq,
            wall_clock: stamp.wall_clock,
            scope,
            body,
        });
    }

    fn push_kr(&mut self, entry: RepoEntry, dp: &DpId) {
        let stamp = match &entry {
            RepoEntry::Version(row) => row.stamp,
            RepoEntry::Status(change) => change.stamp,
        };
        self.push(stamp, Some(dp.clone()), LogBody::Kr(entry));
    }

    fn event(
        &mut self,
        logs: &WorkspaceLogs,
        kind: EventKind,
        actor: &ActorId,
        dp: &DpId,
        payload: String,
        subject: Option<KrRef>,
    ) -> AwarenessEvent {
        let stamp = self.stamp();
        let id = self
            .event_ids
            .entry(dp.clone())
            .or_insert_with(|| logs.latest(dp));
        *id += 1;
        let event = AwarenessEvent {
            event_id: *id,
            kind,
            actor: actor.clone(),
            workspace: dp.clone(),
            stamp,
            payload,
            subject,
        };
        self.push(stamp, Some(dp.clone()), LogBody::Awareness(event.clone()));
        event
    }
}

struct Inner {
    state: State,
    hub: AwarenessHub,
    log: Vec<LogEntry>,
    writer: Option<LogWriter>,
    data_dir: Option<PathBuf>,
    since_snapshot: u64,
}

impl Inner {
    fn txn(&self, now: DateTime<Utc>) -> Txn {
        // Stamps have millisecond resolution, as stored in the log.
        let now = DateTime::from_timestamp_millis(now.timestamp_millis()).expect("clock within range");
        Txn {
            next_seq: self.state.last_seq + 1,
            now,
            entries: Vec::new(),
            event_ids: BTreeMap::new(),
        }
    }

    fn commit(&mut self, txn: Txn, snapshot_every: Option<u64>) -> Result<()> {
        if let Some(writer) = &mut self.writer {
            writer.append(&txn.entries)?;
        }
        for entry in &txn.entries {
            if let Err(reason) = self.state.apply(entry) {
                panic!("planned entry {} failed to apply: {reason}", entry.seq);
            }
        }
        for entry in &txn.entries {
            match &entry.body {
                LogBody::Problem(dp) => self.hub.open_workspace(dp.dp_id.clone()),
                LogBody::Awareness(event) => {
                    self.hub
                        .logs_mut()
                        .record(event.clone())
                        .expect("hub logs follow the state's logs");
                    self.hub.deliver(event);
                }
                _ => {}
            }
        }
        self.since_snapshot += txn.entries.len() as u64;
        self.log.extend(txn.entries);
        if let Some(every) = snapshot_every {
            if self.since_snapshot >= every && self.data_dir.is_some() {
                self.write_snapshot()?;
            }
        }
        Ok(())
    }

    fn write_snapshot(&mut self) -> Result<Option<PathBuf>> {
        let Some(dir) = &self.data_dir else {
            return Ok(None);
        };
        let path = log::snapshot_path(dir, self.state.last_seq);
        let file = SnapshotFile {
            seq: self.state.last_seq,
            state: self.state.clone(),
        };
        let body = serde_json::to_vec(&file).expect("state serializes");
        std::fs::write(&path, body).map_err(|source| Error::WriteFailure {
            path: path.clone(),
            source,
        })?;
        self.since_snapshot = 0;
        Ok(Some(path))
    }

    /// Pushes an annotation with its AnnotationRef version and Activity event.
    fn push_annotation(&self, txn: &mut Txn, author: &Actor, ann: Annotation, kr_stamp: TemporalStamp) -> Result<()> {
        let phase = self.state.problem(&ann.dp_id)?.current_phase;
        let payload = json!({
            "annotation_id": ann.annotation_id,
            "target": ann.anchor.target,
            "body": ann.body,
            "attributes": ann.attributes,
        });
        let row = self.state.repository.plan_declare(
            author,
            KrId::from_seq(kr_stamp.seq),
            KrKind::AnnotationRef,
            payload,
            ann.dp_id.clone(),
            phase,
            kr_stamp,
        )?;
        let subject = row.kr_ref();
        let dp = ann.dp_id.clone();
        let payload = format!("annotation_created:{}", ann.annotation_id);
        txn.push(ann.t_a, Some(dp.clone()), LogBody::Annotation(ann));
        txn.push_kr(RepoEntry::Version(row), &dp);
        txn.event(&self.state.workspaces, EventKind::Activity, &author.actor_id, &dp, payload, Some(subject));
        Ok(())
    }
}

pub struct KnowledgeService {
    inner: RwLock<Inner>,
    config: ServiceConfig,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for KnowledgeService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KnowledgeService")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

pub fn hash_token(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

impl KnowledgeService {
    /// A service with no log file.
    pub fn in_memory(config: ServiceConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        config.check()?;
        Ok(Self::assemble(config, clock, State::default(), Vec::new(), None, None))
    }

    /// An in-memory service rebuilt from exported log entries.
    pub fn replay(config: ServiceConfig, clock: Arc<dyn Clock>, entries: Vec<LogEntry>) -> Result<Self> {
        config.check()?;
        let mut state = State::default();
        for (idx, entry) in entries.iter().enumerate() {
            state.apply(entry).map_err(|reason| Error::CorruptLog {
                line: idx + 1,
                reason,
            })?;
        }
        Ok(Self::assemble(config, clock, state, entries, None, None))
    }

    pub fn open(config: ServiceConfig) -> Result<Self> {
        Self::open_with_clock(config, Arc::new(SystemClock))
    }

    /// Opens `config.data_directory`, rebuilding state from the newest
    /// snapshot (if any) and the log.
    pub fn open_with_clock(config: ServiceConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        config.check()?;
        let dir = config.data_directory.clone();
        std::fs::create_dir_all(&dir).map_err(|source| Error::WriteFailure {
            path: dir.clone(),
            source,
        })?;
        let log_path = dir.join(log::LOG_FILE);
        let entries = log::read_log(&log_path)?;
        let last_log_seq = entries.last().map_or(0, |e| e.seq);
        let mut state = State::default();
        if let Some((seq, path)) = log::latest_snapshot(&dir)? {
            if seq <= last_log_seq && entries.iter().any(|e| e.seq == seq) {
                let snapshot: SnapshotFile = serde_json::from_slice(&std::fs::read(&path)?)
                    .map_err(|e| Error::CorruptLog {
                        line: 0,
                        reason: format!("{}: {e}", path.display()),
                    })?;
                if snapshot.seq == snapshot.state.last_seq {
                    state = snapshot.state;
                    state.reindex();
                }
            }
        }
        for (idx, entry) in entries.iter().enumerate() {
            if entry.seq <= state.last_seq {
                continue;
            }
            state.apply(entry).map_err(|reason| Error::CorruptLog {
                line: idx + 1,
                reason,
            })?;
        }
        let writer = LogWriter::open(&log_path)?;
        Ok(Self::assemble(config, clock, state, entries, Some(writer), Some(dir)))
    }

    fn assemble(
        config: ServiceConfig,
        clock: Arc<dyn Clock>,
        state: State,
        log: Vec<LogEntry>,
        writer: Option<LogWriter>,
        data_dir: Option<PathBuf>,
    ) -> Self {
        let hub = AwarenessHub::with_logs(state.workspaces.clone(), clock.clone(), config.session_timeout());
        Self {
            inner: RwLock::new(Inner {
                state,
                hub,
                log,
                writer,
                data_dir,
                since_snapshot: 0,
            }),
            config,
            clock,
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn mutate<T>(&self, plan: impl FnOnce(&Inner, &mut Txn) -> Result<T>) -> Result<T> {
        let mut inner = self.inner.write();
        let mut txn = inner.txn(self.clock.now());
        let out = plan(&inner, &mut txn)?;
        inner.commit(txn, self.config.snapshot_every)?;
        Ok(out)
    }

    fn read<T>(&self, f: impl FnOnce(&State) -> Result<T>) -> Result<T> {
        f(&self.inner.read().state)
    }

    // ---- domain model ----

    pub fn register_actor(&self, display_name: &str, role: Role) -> Result<Actor> {
        self.register(display_name, role, None)
    }

    /// Registers an actor that authenticates with `token`. Only the token's
    /// hash is stored.
    pub fn register_actor_with_token(&self, display_name: &str, role: Role, token: &str) -> Result<Actor> {
        self.register(display_name, role, Some(hash_token(token)))
    }

    fn register(&self, display_name: &str, role: Role, token_hash: Option<String>) -> Result<Actor> {
        let name = display_name.trim();
        if name.is_empty() {
            return Err(Error::EmptyName);
        }
        self.mutate(|_, txn| {
            let stamp = txn.stamp();
            let actor = Actor {
                actor_id: ActorId::from_seq(stamp.seq),
                display_name: name.to_owned(),
                role,
            };
            txn.push(
                stamp,
                None,
                LogBody::Actor(ActorRecord {
                    actor: actor.clone(),
                    token_hash,
                }),
            );
            Ok(actor)
        })
    }

    pub fn authenticate(&self, token: &str) -> Option<Actor> {
        let inner = self.inner.read();
        let state = &inner.state;
        state
            .tokens
            .get(&hash_token(token))
            .and_then(|id| state.actors.get(id))
            .cloned()
    }

    pub fn actor(&self, id: &ActorId) -> Result<Actor> {
        self.read(|s| s.actor(id).cloned())
    }

    pub fn actors(&self) -> Vec<Actor> {
        self.inner.read().state.actors.values().cloned().collect()
    }

    pub fn create_decision_problem(
        &self,
        author: &ActorId,
        title: &str,
        initial_demand_text: &str,
        internal_context: &str,
        external_context: &str,
    ) -> Result<DecisionProblem> {
        self.mutate(|inner, txn| {
            let state = &inner.state;
            let actor = state.actor(author)?;
            if !actor.role.may_author_declaration() {
                return Err(Error::RoleViolation {
                    actor: actor.actor_id.clone(),
                    role: actor.role,
                    action: "create decision problems",
                });
            }
            require_text("title", title)?;
            require_text("initial_demand", initial_demand_text)?;

            let doc_stamp = txn.stamp();
            let dp_stamp = txn.stamp();
            let dp_id = DpId::from_seq(dp_stamp.seq);
            let document = Document {
                doc_uri: DocUri::new(format!("kcap://{dp_id}/initial-demand")),
                content: initial_demand_text.to_owned(),
                content_hash: Document::hash_content(initial_demand_text),
                created_at: doc_stamp,
                dp_id: Some(dp_id.clone()),
            };
            let problem = DecisionProblem {
                dp_id: dp_id.clone(),
                title: title.trim().to_owned(),
                initial_demand: document.doc_uri.clone(),
                internal_context: internal_context.to_owned(),
                external_context: external_context.to_owned(),
                current_phase: EiPhase::Translation,
                created_by: actor.actor_id.clone(),
                created_at: dp_stamp,
            };
            let kr_stamp = txn.stamp();
            let declaration = state.repository.plan_declare(
                actor,
                KrId::from_seq(kr_stamp.seq),
                KrKind::Declaration,
                json!({
                    "title": problem.title,
                    "initial_demand": document.doc_uri,
                    "demand_text": initial_demand_text,
                    "internal_context": internal_context,
                    "external_context": external_context,
                }),
                dp_id.clone(),
                EiPhase::Translation,
                kr_stamp,
            )?;
            let subject = declaration.kr_ref();
            txn.push(doc_stamp, Some(dp_id.clone()), LogBody::Document(document));
            txn.push(dp_stamp, Some(dp_id.clone()), LogBody::Problem(problem.clone()));
            txn.push_kr(RepoEntry::Version(declaration), &dp_id);
            // The workspace opens when the problem entry applies.
            txn.event(
                &WorkspaceLogs::default(),
                EventKind::Activity,
                author,
                &dp_id,
                format!("declared:{subject}"),
                Some(subject),
            );
            Ok(problem)
        })
    }

    pub fn problem(&self, dp_id: &DpId) -> Result<DecisionProblem> {
        self.read(|s| s.problem(dp_id).cloned())
    }

    pub fn problems(&self) -> Vec<DecisionProblem> {
        self.inner.read().state.problems.values().cloned().collect()
    }

    pub fn define_stake(
        &self,
        author: &ActorId,
        dp_id: &DpId,
        observed_object: &str,
        signal: &str,
        hypothesis: &str,
    ) -> Result<StakeVersion> {
        let payload = json!({
            "observed_object": observed_object,
            "signal": signal,
            "hypothesis": hypothesis,
        });
        let kr = self.mutate(|inner, txn| {
            let state = &inner.state;
            let actor = state.actor(author)?;
            let problem = state.problem(dp_id)?;
            if !actor.role.may_define_stake() {
                return Err(Error::RoleViolation {
                    actor: actor.actor_id.clone(),
                    role: actor.role,
                    action: "define stakes",
                });
            }
            StakeFields::parse(&payload)?;
            match state.stake_lineages.get(dp_id) {
                Some(kr_id) => plan_append(inner, txn, actor, kr_id, payload.clone(), problem.current_phase),
                None => plan_declare(inner, txn, actor, KrKind::StakeDefinition, payload.clone(), problem),
            }
        })?;
        Ok(StakeVersion {
            stake: stake_from_row(&kr)?,
            kr,
        })
    }

    /// Newest version of the problem's stake lineage.
    pub fn current_stake(&self, dp_id: &DpId) -> Result<Option<StakeVersion>> {
        self.read(|s| {
            s.problem(dp_id)?;
            let Some(kr_id) = s.stake_lineages.get(dp_id) else {
                return Ok(None);
            };
            let kr = s.repository.lineage(kr_id)?.newest().current();
            Ok(Some(StakeVersion {
                stake: stake_from_row(&kr)?,
                kr,
            }))
        })
    }

    pub fn advance_phase(&self, author: &ActorId, dp_id: &DpId) -> Result<EiPhase> {
        self.mutate(|inner, txn| {
            let state = &inner.state;
            let actor = state.actor(author)?;
            let problem = state.problem(dp_id)?;
            if actor.role != Role::Coordinator && problem.created_by != actor.actor_id {
                return Err(Error::RoleViolation {
                    actor: actor.actor_id.clone(),
                    role: actor.role,
                    action: "advance the phase of this decision problem",
                });
            }
            let from = problem.current_phase;
            let to = from.next().ok_or_else(|| Error::TerminalPhase(dp_id.clone()))?;
            if from == EiPhase::Translation {
                let conceded = state
                    .stake_lineages
                    .get(dp_id)
                    .and_then(|kr_id| state.repository.lineage(kr_id).ok())
                    .is_some_and(|l| l.is_conceded());
                if !conceded {
                    return Err(Error::PhaseGate(format!(
                        "{dp_id} cannot leave Translation before its newest stake version is validated"
                    )));
                }
            }
            let stamp = txn.stamp();
            let row = state.repository.plan_declare(
                actor,
                KrId::from_seq(stamp.seq),
                KrKind::PhaseTransition,
                json!({ "from": from, "to": to }),
                dp_id.clone(),
                from,
                stamp,
            )?;
            let subject = row.kr_ref();
            txn.push_kr(RepoEntry::Version(row), dp_id);
            txn.event(
                &state.workspaces,
                EventKind::Activity,
                author,
                dp_id,
                format!("phase_advanced:{to}"),
                Some(subject),
            );
            Ok(to)
        })
    }

    pub fn add_document(
        &self,
        author: &ActorId,
        dp_id: Option<&DpId>,
        doc_uri: Option<DocUri>,
        content: &str,
    ) -> Result<Document> {
        self.mutate(|inner, txn| {
            let state = &inner.state;
            state.actor(author)?;
            if let Some(dp) = dp_id {
                state.problem(dp)?;
            }
            require_text("content", content)?;
            let stamp = txn.stamp();
            let uri = doc_uri.unwrap_or_else(|| DocUri::new(format!("kcap://doc-{}", stamp.seq)));
            if uri.as_str().trim().is_empty() {
                return Err(Error::EmptyField("doc_uri"));
            }
            if state.documents.contains_key(&uri) {
                return Err(Error::DuplicateDocument(uri.to_string()));
            }
            let document = Document {
                doc_uri: uri.clone(),
                content: content.to_owned(),
                content_hash: Document::hash_content(content),
                created_at: stamp,
                dp_id: dp_id.cloned(),
            };
            txn.push(stamp, dp_id.cloned(), LogBody::Document(document.clone()));
            if let Some(dp) = dp_id {
                txn.event(
                    &state.workspaces,
                    EventKind::Workspace,
                    author,
                    dp,
                    format!("document_added:{uri}"),
                    None,
                );
            }
            Ok(document)
        })
    }

    pub fn document(&self, uri: &DocUri) -> Result<Document> {
        self.read(|s| {
            s.documents
                .get(uri)
                .cloned()
                .ok_or_else(|| Error::DanglingAnchor(uri.to_string()))
        })
    }

    // ---- annotation engine ----

    pub fn create_annotation(
        &self,
        author: &ActorId,
        dp_id: &DpId,
        anchor: &Anchor,
        draft: AnnotationDraft,
    ) -> Result<Annotation> {
        self.mutate(|inner, txn| {
            let state = &inner.state;
            let actor = state.actor(author)?;
            state.problem(dp_id)?;
            let stamp = txn.stamp();
            let ann = state.annotations.plan_create(
                &state.documents,
                AnnotationId::from_seq(stamp.seq),
                actor.actor_id.clone(),
                dp_id.clone(),
                anchor,
                draft,
                stamp,
            )?;
            let kr_stamp = txn.stamp();
            inner.push_annotation(txn, actor, ann.clone(), kr_stamp)?;
            Ok(ann)
        })
    }

    pub fn follow_up(
        &self,
        author: &ActorId,
        parent: &AnnotationId,
        draft: AnnotationDraft,
    ) -> Result<Annotation> {
        self.mutate(|inner, txn| {
            let state = &inner.state;
            let actor = state.actor(author)?;
            let stamp = txn.stamp();
            let ann = state.annotations.plan_follow_up(
                AnnotationId::from_seq(stamp.seq),
                actor.actor_id.clone(),
                parent,
                draft,
                stamp,
            )?;
            let kr_stamp = txn.stamp();
            inner.push_annotation(txn, actor, ann.clone(), kr_stamp)?;
            Ok(ann)
        })
    }

    pub fn reuse_annotation(
        &self,
        author: &ActorId,
        source: &AnnotationId,
        new_anchor: &Anchor,
        edited_body: Option<String>,
        edited_attributes: Option<Vec<AttributePair>>,
    ) -> Result<Annotation> {
        self.mutate(|inner, txn| {
            let state = &inner.state;
            let actor = state.actor(author)?;
            let stamp = txn.stamp();
            let ann = state.annotations.plan_reuse(
                &state.documents,
                AnnotationId::from_seq(stamp.seq),
                actor.actor_id.clone(),
                source,
                new_anchor,
                edited_body,
                edited_attributes,
                stamp,
            )?;
            let kr_stamp = txn.stamp();
            inner.push_annotation(txn, actor, ann.clone(), kr_stamp)?;
            Ok(ann)
        })
    }

    /// Re-anchors `anchor` against `current_content`. The target must exist.
    pub fn resolve_anchor(&self, anchor: &Anchor, current_content: &str) -> Result<ResolvedSpan> {
        self.read(|s| {
            s.annotations.target_text(&s.documents, &anchor.target)?;
            annotation::resolve_anchor(anchor, current_content)
        })
    }

    pub fn annotation(&self, id: &AnnotationId) -> Result<Annotation> {
        self.read(|s| {
            s.annotations
                .get(id)
                .cloned()
                .ok_or_else(|| Error::UnknownAnnotation(id.clone()))
        })
    }

    /// Annotations of one decision problem in creation order.
    pub fn annotations_for(&self, dp_id: &DpId) -> Result<Vec<Annotation>> {
        self.read(|s| {
            s.problem(dp_id)?;
            Ok(s.annotations.iter().filter(|a| &a.dp_id == dp_id).cloned().collect())
        })
    }

    pub fn list_thread(&self, root: &AnnotationId) -> Result<ThreadNode> {
        self.read(|s| s.annotations.list_thread(root))
    }

    pub fn annotation_lineage(&self, id: &AnnotationId) -> Result<Vec<Annotation>> {
        self.read(|s| s.annotations.lineage(id))
    }

    // ---- knowledge repository ----

    /// Starts a new lineage. Only Declaration and StakeDefinition lineages are
    /// declared directly; the other kinds are written by their operations.
    pub fn declare(&self, author: &ActorId, kind: KrKind, payload: Value, dp_id: &DpId) -> Result<KnowledgeResource> {
        self.mutate(|inner, txn| {
            let state = &inner.state;
            let actor = state.actor(author)?;
            let problem = state.problem(dp_id)?;
            match kind {
                KrKind::Declaration => {}
                KrKind::StakeDefinition => {
                    if state.stake_lineages.contains_key(dp_id) {
                        return Err(Error::StakeLineageExists(dp_id.clone()));
                    }
                    if kind.role_permits(actor.role) {
                        StakeFields::parse(&payload)?;
                    }
                }
                other => return Err(Error::InvalidKind(other)),
            }
            plan_declare(inner, txn, actor, kind, payload, problem)
        })
    }

    pub fn append_version(&self, author: &ActorId, kr_id: &KrId, payload: Value) -> Result<KnowledgeResource> {
        self.mutate(|inner, txn| {
            let state = &inner.state;
            let actor = state.actor(author)?;
            let lineage = state.repository.lineage(kr_id)?;
            match lineage.kind {
                KrKind::Declaration => {}
                KrKind::StakeDefinition => {
                    if lineage.kind.role_permits(actor.role) {
                        StakeFields::parse(&payload)?;
                    }
                }
                other => return Err(Error::InvalidKind(other)),
            }
            let phase = state.problem(&lineage.dp_id)?.current_phase;
            plan_append(inner, txn, actor, kr_id, payload, phase)
        })
    }

    pub fn validate(&self, validator: &ActorId, kr_id: &KrId, version: u32) -> Result<KnowledgeResource> {
        let kr = KrRef::new(kr_id.clone(), version);
        self.mutate(|inner, txn| {
            let state = &inner.state;
            let actor = state.actor(validator)?;
            let stamp = txn.stamp();
            let change = state.repository.plan_validate(actor, &kr, stamp)?;
            let dp = state.repository.lineage(kr_id)?.dp_id.clone();
            txn.push(stamp, Some(dp.clone()), LogBody::Kr(RepoEntry::Status(change)));
            txn.event(
                &state.workspaces,
                EventKind::Workspace,
                validator,
                &dp,
                format!("validated:{kr}"),
                Some(kr.clone()),
            );
            Ok(())
        })?;
        self.read(|s| s.repository.get(&kr).ok_or_else(|| Error::UnknownLineage(kr_id.clone())))
    }

    pub fn get_history(&self, kr_id: &KrId) -> Result<Vec<HistoryEntry>> {
        self.read(|s| s.repository.get_history(kr_id))
    }

    pub fn knowledge_resource(&self, kr: &KrRef) -> Result<KnowledgeResource> {
        self.read(|s| s.repository.get(kr).ok_or_else(|| Error::UnknownLineage(kr.kr_id.clone())))
    }

    pub fn snapshot_at(&self, seq_bound: u64) -> Repository {
        self.inner.read().state.repository.snapshot_at(seq_bound)
    }

    /// Clone of the live repository.
    pub fn repository(&self) -> Repository {
        self.inner.read().state.repository.clone()
    }

    // ---- exploitation ----

    pub fn explore(&self) -> VocabularyReport {
        let inner = self.inner.read();
        exploitation::explore(&inner.state.repository, &inner.state.annotations)
    }

    pub fn query(&self, q: &CaseQuery) -> Result<Vec<CaseMatch>> {
        self.read(|s| {
            if let Some(dp) = &q.dp_scope {
                s.problem(dp)?;
            }
            exploitation::query(&s.repository, q, &self.config.retrieval_weights)
        })
    }

    pub fn analyze(&self, dp_scope: Option<&DpId>) -> Result<IndicatorReport> {
        self.read(|s| {
            if let Some(dp) = dp_scope {
                s.problem(dp)?;
            }
            Ok(exploitation::analyze(&s.repository, dp_scope))
        })
    }

    pub fn record_feedback(
        &self,
        actor: &ActorId,
        kr: &KrRef,
        rating: i64,
        new_problem: Option<DpId>,
        comment: Option<String>,
    ) -> Result<FeedbackRecord> {
        let rating = exploitation::check_rating(rating)?;
        self.mutate(|inner, txn| {
            let state = &inner.state;
            let rater = state.actor(actor)?;
            let target = state
                .repository
                .get(kr)
                .ok_or_else(|| Error::UnknownLineage(kr.kr_id.clone()))?;
            if let Some(dp) = &new_problem {
                state.problem(dp)?;
            }
            let payload = serde_json::to_value(FeedbackPayload {
                target: kr.clone(),
                rating,
                new_problem: new_problem.clone(),
                comment: comment.clone(),
            })
            .expect("feedback serializes");
            let phase = state.problem(&target.dp_id)?.current_phase;
            let row = match state.feedback_lineages.get(&(actor.clone(), kr.clone())) {
                Some(kr_id) => {
                    let version_stamp = txn.stamp();
                    let status_stamp = txn.stamp();
                    let (row, demote) = state.repository.plan_append(
                        rater,
                        kr_id,
                        payload,
                        phase,
                        version_stamp,
                        status_stamp,
                    )?;
                    txn.push_kr(RepoEntry::Version(row.clone()), &target.dp_id);
                    txn.push_kr(RepoEntry::Status(demote), &target.dp_id);
                    row
                }
                None => {
                    let stamp = txn.stamp();
                    let row = state.repository.plan_declare(
                        rater,
                        KrId::from_seq(stamp.seq),
                        KrKind::Feedback,
                        payload,
                        target.dp_id.clone(),
                        phase,
                        stamp,
                    )?;
                    txn.push_kr(RepoEntry::Version(row.clone()), &target.dp_id);
                    row
                }
            };
            txn.event(
                &state.workspaces,
                EventKind::Workspace,
                actor,
                &target.dp_id,
                format!("feedback:{kr}"),
                Some(row.kr_ref()),
            );
            Ok(FeedbackRecord {
                actor: actor.clone(),
                kr: kr.clone(),
                rating,
                new_problem,
                comment,
                stamp: row.stamp,
                stored_as: row.kr_ref(),
            })
        })
    }

    pub fn recommend(&self, for_actor: &ActorId, limit: usize) -> Result<Vec<Recommendation>> {
        self.read(|s| {
            s.actor(for_actor)?;
            exploitation::recommend(&s.repository, for_actor, limit, self.config.cf_min_co_raters)
        })
    }

    // ---- awareness hub ----

    pub fn join(&self, actor: &ActorId, dp_id: &DpId) -> Result<JoinTicket> {
        let mut inner = self.inner.write();
        inner.state.actor(actor)?;
        inner.state.problem(dp_id)?;
        inner.hub.join(actor.clone(), dp_id.clone())
    }

    pub fn heartbeat(&self, session: &SessionId, availability: Availability) -> Result<bool> {
        self.inner.write().hub.heartbeat(session, availability)
    }

    /// Expires sessions that missed their heartbeat deadline.
    pub fn sweep_sessions(&self) {
        self.inner.write().hub.sweep()
    }

    pub fn leave(&self, session: &SessionId) {
        self.inner.write().hub.leave(session)
    }

    pub fn session(&self, session: &SessionId) -> Option<crate::awareness::Session> {
        let mut inner = self.inner.write();
        inner.hub.sweep();
        inner.hub.session(session).cloned()
    }

    /// Publishes a Workspace event. Activity events are emitted only by the
    /// operations that append to the repository, and presence only by
    /// session changes.
    pub fn publish_event(&self, kind: EventKind, actor: &ActorId, dp_id: &DpId, payload: &str) -> Result<AwarenessEvent> {
        if kind != EventKind::Workspace {
            return Err(Error::ReservedEventKind(kind));
        }
        self.mutate(|inner, txn| {
            inner.state.actor(actor)?;
            inner.state.problem(dp_id)?;
            Ok(txn.event(&inner.state.workspaces, kind, actor, dp_id, payload.to_owned(), None))
        })
    }

    pub fn presence_roster(&self, dp_id: &DpId) -> Result<Vec<RosterEntry>> {
        let mut inner = self.inner.write();
        inner.state.problem(dp_id)?;
        inner.hub.presence_roster(dp_id)
    }

    pub fn replay_since(&self, dp_id: &DpId, after_event_id: u64) -> Result<Vec<AwarenessEvent>> {
        self.read(|s| {
            s.problem(dp_id)?;
            Ok(s.workspaces
                .events(dp_id)
                .iter()
                .skip(after_event_id as usize)
                .cloned()
                .collect())
        })
    }

    // ---- operations on the log ----

    /// Every log entry in log order.
    pub fn log_entries(&self) -> Vec<LogEntry> {
        self.inner.read().log.clone()
    }

    pub fn last_seq(&self) -> u64 {
        self.inner.read().state.last_seq
    }

    /// Log entries in log order, restricted to `dp_scope` when given.
    pub fn export_entries(&self, dp_scope: Option<&DpId>) -> Result<Vec<LogEntry>> {
        let inner = self.inner.read();
        if let Some(dp) = dp_scope {
            inner.state.problem(dp)?;
        }
        Ok(inner
            .log
            .iter()
            .filter(|e| dp_scope.is_none_or(|dp| e.scope.as_ref() == Some(dp)))
            .cloned()
            .collect())
    }

    /// Writes [`Self::export_entries`] to `destination`. Returns the number
    /// of records written.
    pub fn export_log(&self, dp_scope: Option<&DpId>, destination: &Path) -> Result<usize> {
        let entries = self.export_entries(dp_scope)?;
        log::write_entries(destination, &entries)?;
        Ok(entries.len())
    }

    /// Dumps the full state to `snapshot-<seq>` in the data directory.
    /// Returns `None` for in-memory services.
    pub fn write_snapshot(&self) -> Result<Option<PathBuf>> {
        self.inner.write().write_snapshot()
    }

    /// Clone of the state rebuilt from the log, for comparisons.
    pub fn state(&self) -> State {
        self.inner.read().state.clone()
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }
}

fn plan_declare(
    inner: &Inner,
    txn: &mut Txn,
    actor: &Actor,
    kind: KrKind,
    payload: Value,
    problem: &DecisionProblem,
) -> Result<KnowledgeResource> {
    let stamp = txn.stamp();
    let row = inner.state.repository.plan_declare(
        actor,
        KrId::from_seq(stamp.seq),
        kind,
        payload,
        problem.dp_id.clone(),
        problem.current_phase,
        stamp,
    )?;
    let subject = row.kr_ref();
    let verb = match kind {
        KrKind::StakeDefinition => "stake_defined",
        _ => "declared",
    };
    txn.push_kr(RepoEntry::Version(row.clone()), &problem.dp_id);
    txn.event(
        &inner.state.workspaces,
        EventKind::Activity,
        &actor.actor_id,
        &problem.dp_id,
        format!("{verb}:{subject}"),
        Some(subject),
    );
    Ok(row)
}

fn plan_append(
    inner: &Inner,
    txn: &mut Txn,
    actor: &Actor,
    kr_id: &KrId,
    payload: Value,
    phase: EiPhase,
) -> Result<KnowledgeResource> {
    let version_stamp = txn.stamp();
    let status_stamp = txn.stamp();
    let (row, demote) = inner.state.repository.plan_append(
        actor,
        kr_id,
        payload,
        phase,
        version_stamp,
        status_stamp,
    )?;
    let subject = row.kr_ref();
    let verb = match row.kind {
        KrKind::StakeDefinition => "stake_updated",
        _ => "declaration_updated",
    };
    let dp = row.dp_id.clone();
    txn.push_kr(RepoEntry::Version(row.clone()), &dp);
    txn.push_kr(RepoEntry::Status(demote), &dp);
    txn.event(
        &inner.state.workspaces,
        EventKind::Activity,
        &actor.actor_id,
        &dp,
        format!("{verb}:{subject}"),
        Some(subject),
    );
    let mut current = row;
    current.status = crate::repository::KrStatus::Evolving;
    Ok(current)
}

fn stake_from_row(kr: &KnowledgeResource) -> Result<Stake> {
    let fields = StakeFields::parse(&kr.payload)?;
    Ok(Stake {
        observed_object: fields.observed_object,
        signal: fields.signal,
        hypothesis: fields.hypothesis,
        dp_id: kr.dp_id.clone(),
        defined_by: kr.author.clone(),
    })
}
