//! Append-only, temporally stamped store of knowledge resources.
//!
//! The repository is a pure state machine over [`RepoEntry`] values: version
//! rows and status-change entries. Nothing is updated in place; a version's
//! current status is the last entry of its status timeline. The `plan_*`
//! methods check preconditions against the current state and build the
//! entries an operation would append, without mutating anything. Entries only
//! take effect through [`Repository::apply`], which is also the replay path.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::{Actor, EiPhase, Role};
use crate::error::{Error, Result};
use crate::ids::{ActorId, DpId, KrId, KrRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TemporalStamp {
    #[serde(with = "chrono::serde::ts_milliseconds")]
    pub wall_clock: DateTime<Utc>,
    pub seq: u64,
}

impl TemporalStamp {
    pub fn new(wall_clock: DateTime<Utc>, seq: u64) -> Self {
        Self { wall_clock, seq }
    }
}

impl PartialOrd for TemporalStamp {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TemporalStamp {
    // Ordering is by seq only; the wall clock is informational.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.seq.cmp(&other.seq)
    }
}

/// Origin of a stamp: `t_d` for declaration-originated knowledge, `t_a` for
/// annotation-originated knowledge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StampTag {
    #[serde(rename = "t_d")]
    Declaration,
    #[serde(rename = "t_a")]
    Annotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KrKind {
    Declaration,
    StakeDefinition,
    AnnotationRef,
    Feedback,
    PhaseTransition,
}

impl KrKind {
    pub const ALL: [KrKind; 5] = [
        KrKind::Declaration,
        KrKind::StakeDefinition,
        KrKind::AnnotationRef,
        KrKind::Feedback,
        KrKind::PhaseTransition,
    ];

    /// Kinds that record facts rather than claims are validated at write.
    pub fn auto_validated(self) -> bool {
        matches!(
            self,
            KrKind::AnnotationRef | KrKind::Feedback | KrKind::PhaseTransition
        )
    }

    /// Kinds whose appends are mirrored by exactly one Activity event.
    pub fn emits_activity(self) -> bool {
        !matches!(self, KrKind::Feedback)
    }

    pub fn stamp_tag(self) -> StampTag {
        match self {
            KrKind::AnnotationRef => StampTag::Annotation,
            _ => StampTag::Declaration,
        }
    }

    pub fn role_permits(self, role: Role) -> bool {
        match self {
            KrKind::Declaration => role.may_author_declaration(),
            KrKind::StakeDefinition => role.may_define_stake(),
            KrKind::PhaseTransition => matches!(role, Role::DecisionMaker | Role::Coordinator),
            KrKind::AnnotationRef | KrKind::Feedback => true,
        }
    }
}

impl fmt::Display for KrKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KrStatus {
    Evolving,
    Validated,
    Superseded,
}

impl KrStatus {
    pub const ALL: [KrStatus; 3] = [KrStatus::Evolving, KrStatus::Validated, KrStatus::Superseded];
}

/// One immutable version row. `status` holds the status at write time in the
/// log; values handed out by read methods carry the current status instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeResource {
    pub kr_id: KrId,
    pub version: u32,
    pub kind: KrKind,
    pub payload: Value,
    pub author: ActorId,
    pub author_role: Role,
    pub stamp: TemporalStamp,
    pub tag: StampTag,
    pub status: KrStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<KrRef>,
    pub dp_id: DpId,
    /// Phase of the owning decision problem when the row was written.
    pub phase: EiPhase,
}

impl KnowledgeResource {
    pub fn kr_ref(&self) -> KrRef {
        KrRef::new(self.kr_id.clone(), self.version)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusChange {
    pub kr: KrRef,
    pub status: KrStatus,
    pub stamp: TemporalStamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
pub enum RepoEntry {
    Version(KnowledgeResource),
    Status(StatusChange),
}

impl RepoEntry {
    pub fn seq(&self) -> u64 {
        match self {
            RepoEntry::Version(kr) => kr.stamp.seq,
            RepoEntry::Status(change) => change.stamp.seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub status: KrStatus,
    pub stamp: TemporalStamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionRecord {
    pub row: KnowledgeResource,
    pub timeline: Vec<TimelineEntry>,
}

impl VersionRecord {
    pub fn status(&self) -> KrStatus {
        self.timeline.last().map(|t| t.status).unwrap_or(self.row.status)
    }

    /// The row with its current status.
    pub fn current(&self) -> KnowledgeResource {
        let mut kr = self.row.clone();
        kr.status = self.status();
        kr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub kr_id: KrId,
    pub kind: KrKind,
    pub dp_id: DpId,
    pub versions: Vec<VersionRecord>,
}

impl Lineage {
    pub fn newest(&self) -> &VersionRecord {
        self.versions.last().expect("lineages are created with one version")
    }

    pub fn version(&self, version: u32) -> Option<&VersionRecord> {
        version
            .checked_sub(1)
            .and_then(|idx| self.versions.get(idx as usize))
    }

    /// Conceded exactly when the newest version is Validated.
    pub fn is_conceded(&self) -> bool {
        self.newest().status() == KrStatus::Validated
    }

    pub fn validated_count(&self) -> usize {
        self.versions
            .iter()
            .filter(|v| v.status() == KrStatus::Validated)
            .count()
    }
}

/// One element of [`Repository::get_history`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub version: u32,
    pub status: KrStatus,
    pub stamp: TemporalStamp,
    pub author: ActorId,
    pub author_role: Role,
    pub payload: Value,
    pub timeline: Vec<TimelineEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Repository {
    lineages: BTreeMap<KrId, Lineage>,
    entries: Vec<RepoEntry>,
}

impl Repository {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All entries in log order.
    pub fn entries(&self) -> &[RepoEntry] {
        &self.entries
    }

    pub fn max_seq(&self) -> u64 {
        self.entries.last().map(RepoEntry::seq).unwrap_or(0)
    }

    pub fn lineage(&self, kr_id: &KrId) -> Result<&Lineage> {
        self.lineages
            .get(kr_id)
            .ok_or_else(|| Error::UnknownLineage(kr_id.clone()))
    }

    pub fn lineages(&self) -> impl Iterator<Item = &Lineage> {
        self.lineages.values()
    }

    pub fn get(&self, kr: &KrRef) -> Option<KnowledgeResource> {
        self.lineages
            .get(&kr.kr_id)
            .and_then(|l| l.version(kr.version))
            .map(VersionRecord::current)
    }

    /// Newest version of every lineage, with current status.
    pub fn newest_versions(&self) -> impl Iterator<Item = KnowledgeResource> + '_ {
        self.lineages.values().map(|l| l.newest().current())
    }

    /// Every version row ever written, in log order, with current status.
    pub fn all_versions(&self) -> impl Iterator<Item = KnowledgeResource> + '_ {
        self.entries.iter().filter_map(move |e| match e {
            RepoEntry::Version(row) => self.get(&row.kr_ref()),
            RepoEntry::Status(_) => None,
        })
    }

    pub fn version_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e, RepoEntry::Version(_)))
            .count()
    }

    pub fn get_history(&self, kr_id: &KrId) -> Result<Vec<HistoryEntry>> {
        let lineage = self.lineage(kr_id)?;
        Ok(lineage
            .versions
            .iter()
            .map(|v| HistoryEntry {
                version: v.row.version,
                status: v.status(),
                stamp: v.row.stamp,
                author: v.row.author.clone(),
                author_role: v.row.author_role,
                payload: v.row.payload.clone(),
                timeline: v.timeline.clone(),
            })
            .collect())
    }

    /// Repository state considering only entries with `seq <= seq_bound`.
    pub fn snapshot_at(&self, seq_bound: u64) -> Repository {
        let mut view = Repository::new();
        for entry in self.entries.iter().take_while(|e| e.seq() <= seq_bound) {
            view.apply(entry.clone())
                .expect("entries of a consistent repository replay cleanly");
        }
        view
    }

    /// Builds version 1 of a new lineage.
    #[allow(clippy::too_many_arguments)]
    pub fn plan_declare(
        &self,
        author: &Actor,
        kr_id: KrId,
        kind: KrKind,
        payload: Value,
        dp_id: DpId,
        phase: EiPhase,
        stamp: TemporalStamp,
    ) -> Result<KnowledgeResource> {
        check_role(author, kind)?;
        if self.lineages.contains_key(&kr_id) {
            return Err(Error::InvalidPayload(format!("lineage {kr_id} already exists")));
        }
        Ok(KnowledgeResource {
            kr_id,
            version: 1,
            kind,
            payload,
            author: author.actor_id.clone(),
            author_role: author.role,
            stamp,
            tag: kind.stamp_tag(),
            status: initial_status(kind),
            supersedes: None,
            dp_id,
            phase,
        })
    }

    /// Builds version n+1 and the status change that supersedes version n.
    pub fn plan_append(
        &self,
        author: &Actor,
        kr_id: &KrId,
        payload: Value,
        phase: EiPhase,
        version_stamp: TemporalStamp,
        status_stamp: TemporalStamp,
    ) -> Result<(KnowledgeResource, StatusChange)> {
        let lineage = self.lineage(kr_id)?;
        check_role(author, lineage.kind)?;
        let previous = lineage.newest().row.kr_ref();
        let row = KnowledgeResource {
            kr_id: kr_id.clone(),
            version: previous.version + 1,
            kind: lineage.kind,
            payload,
            author: author.actor_id.clone(),
            author_role: author.role,
            stamp: version_stamp,
            tag: lineage.kind.stamp_tag(),
            status: initial_status(lineage.kind),
            supersedes: Some(previous.clone()),
            dp_id: lineage.dp_id.clone(),
            phase,
        };
        let demote = StatusChange {
            kr: previous,
            status: KrStatus::Superseded,
            stamp: status_stamp,
        };
        Ok((row, demote))
    }

    pub fn plan_validate(
        &self,
        validator: &Actor,
        kr: &KrRef,
        stamp: TemporalStamp,
    ) -> Result<StatusChange> {
        if !validator.role.may_validate() {
            return Err(Error::RoleViolation {
                actor: validator.actor_id.clone(),
                role: validator.role,
                action: "validate knowledge resources",
            });
        }
        let lineage = self.lineage(&kr.kr_id)?;
        let newest = lineage.newest();
        if lineage.version(kr.version).is_none() {
            return Err(Error::UnknownLineage(kr.kr_id.clone()));
        }
        if kr.version != newest.row.version {
            return Err(Error::StaleVersion {
                kr_id: kr.kr_id.clone(),
                version: kr.version,
                newest: newest.row.version,
            });
        }
        if newest.status() != KrStatus::Evolving {
            return Err(Error::AlreadyValidated {
                kr_id: kr.kr_id.clone(),
                version: kr.version,
            });
        }
        Ok(StatusChange {
            kr: kr.clone(),
            status: KrStatus::Validated,
            stamp,
        })
    }

    /// Applies one entry. Rejects entries that would break the lineage
    /// invariants, which only happens when replaying a damaged log.
    pub fn apply(&mut self, entry: RepoEntry) -> Result<(), String> {
        if entry.seq() <= self.max_seq() {
            return Err(format!(
                "sequence {} does not follow {}",
                entry.seq(),
                self.max_seq()
            ));
        }
        match &entry {
            RepoEntry::Version(row) => {
                let record = VersionRecord {
                    row: row.clone(),
                    timeline: vec![TimelineEntry {
                        status: row.status,
                        stamp: row.stamp,
                    }],
                };
                match self.lineages.get_mut(&row.kr_id) {
                    None if row.version == 1 => {
                        self.lineages.insert(
                            row.kr_id.clone(),
                            Lineage {
                                kr_id: row.kr_id.clone(),
                                kind: row.kind,
                                dp_id: row.dp_id.clone(),
                                versions: vec![record],
                            },
                        );
                    }
                    None => return Err(format!("{} v{} has no lineage", row.kr_id, row.version)),
                    Some(lineage) => {
                        let expected = lineage.versions.len() as u32 + 1;
                        if row.version != expected || row.kind != lineage.kind {
                            return Err(format!(
                                "{} v{} out of order (expected v{expected})",
                                row.kr_id, row.version
                            ));
                        }
                        lineage.versions.push(record);
                    }
                }
            }
            RepoEntry::Status(change) => {
                let lineage = self
                    .lineages
                    .get_mut(&change.kr.kr_id)
                    .ok_or_else(|| format!("status change for unknown {}", change.kr))?;
                if change.status == KrStatus::Validated
                    && lineage
                        .versions
                        .iter()
                        .any(|v| v.status() == KrStatus::Validated && v.row.version != change.kr.version)
                {
                    return Err(format!("second validated version in {}", change.kr.kr_id));
                }
                let record = lineage
                    .versions
                    .get_mut((change.kr.version as usize).wrapping_sub(1))
                    .ok_or_else(|| format!("status change for unknown {}", change.kr))?;
                record.timeline.push(TimelineEntry {
                    status: change.status,
                    stamp: change.stamp,
                });
            }
        }
        self.entries.push(entry);
        Ok(())
    }
}

fn initial_status(kind: KrKind) -> KrStatus {
    if kind.auto_validated() {
        KrStatus::Validated
    } else {
        KrStatus::Evolving
    }
}

fn check_role(author: &Actor, kind: KrKind) -> Result<()> {
    if kind.role_permits(author.role) {
        Ok(())
    } else {
        Err(Error::RoleViolation {
            actor: author.actor_id.clone(),
            role: author.role,
            action: match kind {
                KrKind::Declaration => "author declarations",
                KrKind::StakeDefinition => "define stakes",
                KrKind::PhaseTransition => "advance phases",
                KrKind::AnnotationRef | KrKind::Feedback => "write this kind",
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use serde_json::json;

    struct Harness {
        repo: Repository,
        seq: u64,
        dm: Actor,
        watcher: Actor,
    }

    impl Harness {
        fn new() -> Self {
            let actor = |id: &str, role| Actor {
                actor_id: ActorId::new(id),
                display_name: id.into(),
                role,
            };
            Self {
                repo: Repository::new(),
                seq: 0,
                dm: actor("dm", Role::DecisionMaker),
                watcher: actor("w", Role::Watcher),
            }
        }

        fn stamp(&mut self) -> TemporalStamp {
            self.seq += 1;
            TemporalStamp::new(Utc.timestamp_millis_opt(1_000 * self.seq as i64).unwrap(), self.seq)
        }

        fn declare(&mut self, kind: KrKind, author: &Actor) -> KrId {
            let stamp = self.stamp();
            let kr_id = KrId::new(format!("kr-{}", stamp.seq));
            let row = self
                .repo
                .plan_declare(author, kr_id.clone(), kind, json!({"n": 1}), DpId::new("dp-1"), EiPhase::Translation, stamp)
                .unwrap();
            self.repo.apply(RepoEntry::Version(row)).unwrap();
            kr_id
        }

        fn append(&mut self, kr_id: &KrId, author: &Actor) -> u32 {
            let (vs, ss) = (self.stamp(), self.stamp());
            let (row, demote) = self
                .repo
                .plan_append(author, kr_id, json!({"seq": vs.seq}), EiPhase::Translation, vs, ss)
                .unwrap();
            let version = row.version;
            self.repo.apply(RepoEntry::Version(row)).unwrap();
            self.repo.apply(RepoEntry::Status(demote)).unwrap();
            version
        }

        fn validate(&mut self, kr_id: &KrId, version: u32) -> Result<()> {
            let stamp = self.stamp();
            let change = self
                .repo
                .plan_validate(&self.dm.clone(), &KrRef::new(kr_id.clone(), version), stamp)?;
            self.repo.apply(RepoEntry::Status(change)).unwrap();
            Ok(())
        }
    }

    #[test]
    fn declaration_starts_evolving_at_version_one() {
        let mut h = Harness::new();
        let dm = h.dm.clone();
        let kr = h.declare(KrKind::Declaration, &dm);
        let history = h.repo.get_history(&kr).unwrap();
        assert_eq!(history.len(), 1);
        assert_eq!(history[0].version, 1);
        assert_eq!(history[0].status, KrStatus::Evolving);
    }

    #[test]
    fn repeated_declare_opens_new_lineages() {
        let mut h = Harness::new();
        let dm = h.dm.clone();
        let a = h.declare(KrKind::Declaration, &dm);
        let b = h.declare(KrKind::Declaration, &dm);
        assert_ne!(a, b);
        assert_eq!(h.repo.lineages().count(), 2);
    }

    #[test]
    fn watcher_cannot_declare() {
        let h = Harness::new();
        let stamp = TemporalStamp::new(Utc::now(), 1);
        let err = h
            .repo
            .plan_declare(&h.watcher, KrId::new("kr-1"), KrKind::Declaration, json!({}), DpId::new("dp-1"), EiPhase::Translation, stamp)
            .unwrap_err();
        assert!(matches!(err, Error::RoleViolation { .. }));
    }

    #[test]
    fn append_supersedes_previous_version() {
        let mut h = Harness::new();
        let w = h.watcher.clone();
        let kr = h.declare(KrKind::StakeDefinition, &w);
        assert_eq!(h.append(&kr, &w), 2);
        let history = h.repo.get_history(&kr).unwrap();
        let statuses: Vec<_> = history.iter().map(|e| e.status).collect();
        assert_eq!(statuses, [KrStatus::Superseded, KrStatus::Evolving]);
    }

    #[test]
    fn five_appends_give_six_consecutive_versions() {
        let mut h = Harness::new();
        let w = h.watcher.clone();
        let kr = h.declare(KrKind::StakeDefinition, &w);
        for _ in 0..5 {
            h.append(&kr, &w);
        }
        let versions: Vec<u32> = h.repo.get_history(&kr).unwrap().iter().map(|e| e.version).collect();
        assert_eq!(versions, (1..=6).collect::<Vec<_>>());
        let seqs: Vec<u64> = h.repo.get_history(&kr).unwrap().iter().map(|e| e.stamp.seq).collect();
        assert!(seqs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn append_to_missing_lineage_fails() {
        let mut h = Harness::new();
        let (a, b) = (h.stamp(), h.stamp());
        let err = h
            .repo
            .plan_append(&h.watcher, &KrId::new("kr-404"), json!({}), EiPhase::Translation, a, b)
            .unwrap_err();
        assert!(matches!(err, Error::UnknownLineage(_)));
    }

    #[test]
    fn validate_only_newest_evolving_version() {
        let mut h = Harness::new();
        let w = h.watcher.clone();
        let kr = h.declare(KrKind::StakeDefinition, &w);
        h.append(&kr, &w);
        assert!(matches!(h.validate(&kr, 1), Err(Error::StaleVersion { newest: 2, .. })));
        h.validate(&kr, 2).unwrap();
        assert!(h.repo.lineage(&kr).unwrap().is_conceded());
        assert!(matches!(h.validate(&kr, 2), Err(Error::AlreadyValidated { .. })));
    }

    #[test]
    fn append_after_validation_demotes_to_superseded() {
        let mut h = Harness::new();
        let w = h.watcher.clone();
        let kr = h.declare(KrKind::StakeDefinition, &w);
        h.validate(&kr, 1).unwrap();
        h.append(&kr, &w);
        let lineage = h.repo.lineage(&kr).unwrap();
        assert_eq!(lineage.validated_count(), 0);
        assert_eq!(lineage.version(1).unwrap().status(), KrStatus::Superseded);
        assert_eq!(lineage.newest().status(), KrStatus::Evolving);
        let timeline: Vec<_> = lineage.version(1).unwrap().timeline.iter().map(|t| t.status).collect();
        assert_eq!(timeline, [KrStatus::Evolving, KrStatus::Validated, KrStatus::Superseded]);
    }

    #[test]
    fn watcher_cannot_validate() {
        let mut h = Harness::new();
        let w = h.watcher.clone();
        let kr = h.declare(KrKind::StakeDefinition, &w);
        let stamp = h.stamp();
        let err = h.repo.plan_validate(&w, &KrRef::new(kr, 1), stamp).unwrap_err();
        assert!(matches!(err, Error::RoleViolation { .. }));
    }

    #[test]
    fn auto_validated_kinds() {
        let mut h = Harness::new();
        let w = h.watcher.clone();
        let kr = h.declare(KrKind::AnnotationRef, &w);
        assert_eq!(h.repo.lineage(&kr).unwrap().newest().status(), KrStatus::Validated);
        assert_eq!(h.repo.lineage(&kr).unwrap().newest().row.tag, StampTag::Annotation);
    }

    #[test]
    fn snapshot_before_validation_reads_evolving() {
        let mut h = Harness::new();
        let w = h.watcher.clone();
        let kr = h.declare(KrKind::StakeDefinition, &w);
        let before = h.seq;
        h.validate(&kr, 1).unwrap();
        assert!(h.repo.snapshot_at(0).is_empty());
        let view = h.repo.snapshot_at(before);
        assert_eq!(view.lineage(&kr).unwrap().newest().status(), KrStatus::Evolving);
        assert_eq!(h.repo.snapshot_at(h.seq), h.repo);
        assert_eq!(h.repo.snapshot_at(u64::MAX), h.repo);
    }

    #[test]
    fn apply_rejects_gaps_and_second_validation() {
        let mut h = Harness::new();
        let w = h.watcher.clone();
        let kr = h.declare(KrKind::StakeDefinition, &w);
        let stamp = h.stamp();
        let mut row = h.repo.get(&KrRef::new(kr.clone(), 1)).unwrap();
        row.version = 3;
        row.stamp = stamp;
        assert!(h.repo.apply(RepoEntry::Version(row)).is_err());

        h.validate(&kr, 1).unwrap();
        h.append(&kr, &w);
        let stamp = h.stamp();
        // Validating v2 while v1 is still Validated would break the single-Validated rule;
        // v1 was demoted by the append so this is accepted.
        let change = StatusChange { kr: KrRef::new(kr.clone(), 2), status: KrStatus::Validated, stamp };
        h.repo.apply(RepoEntry::Status(change)).unwrap();
        let stamp = h.stamp();
        let again = StatusChange { kr: KrRef::new(kr, 1), status: KrStatus::Validated, stamp };
        assert!(h.repo.apply(RepoEntry::Status(again)).is_err());
    }

    #[test]
    fn stamps_order_by_seq_only() {
        let early = TemporalStamp::new(Utc.timestamp_millis_opt(5_000).unwrap(), 2);
        let late = TemporalStamp::new(Utc.timestamp_millis_opt(1_000).unwrap(), 3);
        assert!(early < late);
    }
}
