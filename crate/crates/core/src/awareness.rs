//! Live sessions and the three awareness levels of a workspace.
//!
//! Workspace and Activity events are sequenced per workspace (gapless ids
//! from 1), persisted, and replayable. Presence signals are live-only: they
//! reach the sessions online at the time, carry `event_id` 0 and are never
//! written to the workspace log, so the persisted id sequence stays gapless.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use crate::error::{Error, Result};
use crate::ids::{ActorId, DpId, KrRef, SessionId};
use crate::repository::TemporalStamp;

pub trait Clock: Send + Sync + fmt::Debug {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock {
    millis: AtomicI64,
}

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self {
            millis: AtomicI64::new(start.timestamp_millis()),
        }
    }

    pub fn advance(&self, by: Duration) {
        self.millis.fetch_add(by.as_millis() as i64, Ordering::SeqCst);
    }
}

impl Default for ManualClock {
    fn default() -> Self {
        Self::new(Utc.with_ymd_and_hms(2011, 9, 1, 8, 0, 0).unwrap())
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        Utc.timestamp_millis_opt(self.millis.load(Ordering::SeqCst))
            .unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Presence,
    Workspace,
    Activity,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Availability {
    Online,
    Away,
    Busy,
}

impl Availability {
    fn rank(self) -> u8 {
        match self {
            Availability::Online => 2,
            Availability::Busy => 1,
            Availability::Away => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AwarenessEvent {
    /// Position in the workspace log; 0 for live-only presence signals.
    pub event_id: u64,
    pub kind: EventKind,
    pub actor: ActorId,
    pub workspace: DpId,
    pub stamp: TemporalStamp,
    pub payload: String,
    /// Knowledge resource version the event reports on, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<KrRef>,
}

impl AwarenessEvent {
    pub fn is_sequenced(&self) -> bool {
        self.event_id > 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: SessionId,
    pub actor: ActorId,
    pub workspace: DpId,
    pub availability: Availability,
    pub last_heartbeat: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub actor: ActorId,
    pub availability: Availability,
    pub session_count: usize,
}

pub type EventReceiver = mpsc::UnboundedReceiver<AwarenessEvent>;

/// Result of [`AwarenessHub::join`].
#[derive(Debug)]
pub struct JoinTicket {
    pub session: Session,
    /// Events persisted since the actor last received one in this workspace.
    pub backlog: u64,
    /// Latest persisted event id at join time. Live delivery on `receiver`
    /// starts strictly after it; `replay_since` covers everything up to it.
    pub high_water: u64,
    pub receiver: EventReceiver,
}

#[derive(Debug)]
struct LiveSession {
    session: Session,
    sender: mpsc::UnboundedSender<AwarenessEvent>,
}

/// Persisted per-workspace event logs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceLogs {
    logs: BTreeMap<DpId, Vec<AwarenessEvent>>,
}

impl WorkspaceLogs {
    pub fn open(&mut self, dp: DpId) {
        self.logs.entry(dp).or_default();
    }

    pub fn contains(&self, dp: &DpId) -> bool {
        self.logs.contains_key(dp)
    }

    pub fn latest(&self, dp: &DpId) -> u64 {
        self.logs.get(dp).map(|l| l.len() as u64).unwrap_or(0)
    }

    pub fn events(&self, dp: &DpId) -> &[AwarenessEvent] {
        self.logs.get(dp).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DpId, &[AwarenessEvent])> {
        self.logs.iter().map(|(dp, events)| (dp, events.as_slice()))
    }

    /// Appends a sequenced event; its id must be the next one.
    pub fn record(&mut self, event: AwarenessEvent) -> Result<(), String> {
        let log = self
            .logs
            .get_mut(&event.workspace)
            .ok_or_else(|| format!("event for unknown workspace {}", event.workspace))?;
        let expected = log.len() as u64 + 1;
        if event.event_id != expected || event.kind == EventKind::Presence {
            return Err(format!(
                "workspace {} event {} out of order (expected {expected})",
                event.workspace, event.event_id
            ));
        }
        log.push(event);
        Ok(())
    }
}

#[derive(Debug)]
pub struct AwarenessHub {
    logs: WorkspaceLogs,
    sessions: BTreeMap<SessionId, LiveSession>,
    last_seen: BTreeMap<(ActorId, DpId), u64>,
    next_session: u64,
    clock: Arc<dyn Clock>,
    timeout: Duration,
}

impl AwarenessHub {
    pub fn new(clock: Arc<dyn Clock>, timeout: Duration) -> Self {
        Self::with_logs(WorkspaceLogs::default(), clock, timeout)
    }

    pub fn with_logs(logs: WorkspaceLogs, clock: Arc<dyn Clock>, timeout: Duration) -> Self {
        Self {
            logs,
            sessions: BTreeMap::new(),
            last_seen: BTreeMap::new(),
            next_session: 1,
            clock,
            timeout,
        }
    }

    pub fn logs(&self) -> &WorkspaceLogs {
        &self.logs
    }

    pub fn logs_mut(&mut self) -> &mut WorkspaceLogs {
        &mut self.logs
    }

    pub fn open_workspace(&mut self, dp: DpId) {
        self.logs.open(dp);
    }

    fn require_workspace(&self, dp: &DpId) -> Result<()> {
        if self.logs.contains(dp) {
            Ok(())
        } else {
            Err(Error::UnknownProblem(dp.clone()))
        }
    }

    fn presence_stamp(&self) -> TemporalStamp {
        TemporalStamp::new(self.clock.now(), 0)
    }

    pub fn join(&mut self, actor: ActorId, dp: DpId) -> Result<JoinTicket> {
        self.require_workspace(&dp)?;
        self.sweep();
        let high_water = self.logs.latest(&dp);
        let seen = self
            .last_seen
            .get(&(actor.clone(), dp.clone()))
            .copied()
            .unwrap_or(0);
        let session = Session {
            session_id: SessionId::from_seq(self.next_session),
            actor: actor.clone(),
            workspace: dp.clone(),
            availability: Availability::Online,
            last_heartbeat: self.clock.now(),
        };
        self.next_session += 1;
        let (sender, receiver) = mpsc::unbounded_channel();
        self.broadcast_presence(&session, "joined");
        self.sessions.insert(
            session.session_id.clone(),
            LiveSession {
                session: session.clone(),
                sender,
            },
        );
        Ok(JoinTicket {
            session,
            backlog: high_water.saturating_sub(seen),
            high_water,
            receiver,
        })
    }

    /// Refreshes a session. Returns whether the availability changed, in which
    /// case a presence signal went out.
    pub fn heartbeat(&mut self, session_id: &SessionId, availability: Availability) -> Result<bool> {
        self.sweep();
        let now = self.clock.now();
        let live = self
            .sessions
            .get_mut(session_id)
            .ok_or_else(|| Error::ExpiredSession(session_id.clone()))?;
        live.session.last_heartbeat = now;
        if live.session.availability == availability {
            return Ok(false);
        }
        live.session.availability = availability;
        let session = live.session.clone();
        self.broadcast_presence(&session, &format!("availability:{availability:?}"));
        Ok(true)
    }

    /// Idempotent: leaving an unknown or expired session succeeds.
    pub fn leave(&mut self, session_id: &SessionId) {
        self.sweep();
        if let Some(live) = self.sessions.remove(session_id) {
            self.broadcast_presence(&live.session, "left");
        }
    }

    pub fn session(&self, session_id: &SessionId) -> Option<&Session> {
        self.sessions.get(session_id).map(|l| &l.session)
    }

    /// Drops sessions whose last heartbeat is older than the timeout.
    pub fn sweep(&mut self) {
        let now = self.clock.now();
        let timeout = chrono::Duration::from_std(self.timeout).unwrap_or(chrono::Duration::MAX);
        let expired: Vec<SessionId> = self
            .sessions
            .values()
            .filter(|l| now - l.session.last_heartbeat > timeout)
            .map(|l| l.session.session_id.clone())
            .collect();
        for id in expired {
            if let Some(live) = self.sessions.remove(&id) {
                self.broadcast_presence(&live.session, "expired");
            }
        }
    }

    fn broadcast_presence(&mut self, origin: &Session, payload: &str) {
        let event = AwarenessEvent {
            event_id: 0,
            kind: EventKind::Presence,
            actor: origin.actor.clone(),
            workspace: origin.workspace.clone(),
            stamp: self.presence_stamp(),
            payload: payload.to_owned(),
            subject: None,
        };
        for live in self.sessions.values() {
            if live.session.workspace == origin.workspace
                && live.session.session_id != origin.session_id
            {
                let _ = live.sender.send(event.clone());
            }
        }
    }

    /// Sends a persisted event to every live session of its workspace.
    pub fn deliver(&mut self, event: &AwarenessEvent) {
        for live in self.sessions.values() {
            if live.session.workspace == event.workspace && live.sender.send(event.clone()).is_ok() {
                let seen = self
                    .last_seen
                    .entry((live.session.actor.clone(), event.workspace.clone()))
                    .or_default();
                *seen = (*seen).max(event.event_id);
            }
        }
    }

    /// Sequences, persists (in memory) and delivers a new event.
    pub fn publish_event(
        &mut self,
        kind: EventKind,
        actor: ActorId,
        dp: DpId,
        payload: impl Into<String>,
        stamp: TemporalStamp,
    ) -> Result<AwarenessEvent> {
        self.require_workspace(&dp)?;
        let event = AwarenessEvent {
            event_id: self.logs.latest(&dp) + 1,
            kind,
            actor,
            workspace: dp,
            stamp,
            payload: payload.into(),
            subject: None,
        };
        if kind == EventKind::Presence {
            return Err(Error::ReservedEventKind(kind));
        }
        self.logs
            .record(event.clone())
            .expect("id assigned from the log length");
        self.deliver(&event);
        Ok(event)
    }

    pub fn presence_roster(&mut self, dp: &DpId) -> Result<Vec<RosterEntry>> {
        self.require_workspace(dp)?;
        self.sweep();
        let mut roster: BTreeMap<ActorId, RosterEntry> = BTreeMap::new();
        for live in self.sessions.values().filter(|l| &l.session.workspace == dp) {
            let entry = roster
                .entry(live.session.actor.clone())
                .or_insert(RosterEntry {
                    actor: live.session.actor.clone(),
                    availability: live.session.availability,
                    session_count: 0,
                });
            entry.session_count += 1;
            if live.session.availability.rank() > entry.availability.rank() {
                entry.availability = live.session.availability;
            }
        }
        Ok(roster.into_values().collect())
    }

    pub fn replay_since(&self, dp: &DpId, after_event_id: u64) -> Result<Vec<AwarenessEvent>> {
        self.require_workspace(dp)?;
        Ok(self
            .logs
            .events(dp)
            .iter()
            .skip(after_event_id as usize)
            .cloned()
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixture {
        clock: Arc<ManualClock>,
        hub: AwarenessHub,
        dp: DpId,
    }

    fn fixture() -> Fixture {
        let clock = Arc::new(ManualClock::default());
        let mut hub = AwarenessHub::new(clock.clone(), Duration::from_secs(45));
        let dp = DpId::new("dp-1");
        hub.open_workspace(dp.clone());
        Fixture { clock, hub, dp }
    }

    impl Fixture {
        fn join(&mut self, actor: &str) -> JoinTicket {
            self.hub.join(ActorId::new(actor), self.dp.clone()).unwrap()
        }

        fn publish(&mut self, n: usize) {
            for i in 0..n {
                let stamp = TemporalStamp::new(self.clock.now(), i as u64 + 1);
                self.hub
                    .publish_event(EventKind::Workspace, ActorId::new("x"), self.dp.clone(), format!("e{i}"), stamp)
                    .unwrap();
            }
        }
    }

    fn drain(rx: &mut EventReceiver) -> Vec<AwarenessEvent> {
        std::iter::from_fn(|| rx.try_recv().ok()).collect()
    }

    #[test]
    fn first_join_has_empty_backlog() {
        let mut f = fixture();
        assert_eq!(f.join("a").backlog, 0);
    }

    #[test]
    fn backlog_counts_events_missed_while_away() {
        let mut f = fixture();
        let mut t = f.join("a");
        f.publish(2);
        assert_eq!(drain(&mut t.receiver).len(), 2);
        f.hub.leave(&t.session.session_id);
        f.publish(7);
        assert_eq!(f.join("a").backlog, 7);
    }

    #[test]
    fn join_presence_reaches_every_other_session() {
        let mut f = fixture();
        let mut a = f.join("a");
        let mut b = f.join("b");
        let mut c = f.join("c");
        let a_seen = drain(&mut a.receiver);
        let b_seen = drain(&mut b.receiver);
        assert!(drain(&mut c.receiver).is_empty());
        assert_eq!(a_seen.len(), 2);
        assert_eq!(b_seen.len(), 1);
        assert!(b_seen.iter().all(|e| e.kind == EventKind::Presence && e.payload == "joined" && e.event_id == 0));
        assert_eq!(b_seen[0].actor, ActorId::new("c"));
    }

    #[test]
    fn heartbeat_broadcasts_only_on_change() {
        let mut f = fixture();
        let a = f.join("a");
        let mut b = f.join("b");
        assert!(!f.hub.heartbeat(&a.session.session_id, Availability::Online).unwrap());
        assert!(drain(&mut b.receiver).is_empty());
        assert!(f.hub.heartbeat(&a.session.session_id, Availability::Busy).unwrap());
        assert_eq!(drain(&mut b.receiver).len(), 1);
    }

    #[test]
    fn heartbeat_after_timeout_is_expired() {
        let mut f = fixture();
        let a = f.join("a");
        f.clock.advance(Duration::from_secs(45));
        f.hub.heartbeat(&a.session.session_id, Availability::Online).unwrap();
        f.clock.advance(Duration::from_secs(46));
        assert!(matches!(
            f.hub.heartbeat(&a.session.session_id, Availability::Online),
            Err(Error::ExpiredSession(_))
        ));
        assert!(f.hub.presence_roster(&f.dp.clone()).unwrap().is_empty());
    }

    #[test]
    fn leave_is_idempotent_and_announced_once() {
        let mut f = fixture();
        let a = f.join("a");
        let mut b = f.join("b");
        let mut c = f.join("c");
        drain(&mut b.receiver);
        f.hub.leave(&a.session.session_id);
        f.hub.leave(&a.session.session_id);
        for rx in [&mut b.receiver, &mut c.receiver] {
            let left: Vec<_> = drain(rx).into_iter().filter(|e| e.payload == "left").collect();
            assert_eq!(left.len(), 1);
        }
        let roster = f.hub.presence_roster(&f.dp.clone()).unwrap();
        assert!(roster.iter().all(|r| r.actor != ActorId::new("a")));
    }

    #[test]
    fn roster_takes_most_available_session() {
        let mut f = fixture();
        let dp = f.dp.clone();
        assert!(f.hub.presence_roster(&dp).unwrap().is_empty());
        let a1 = f.join("a");
        let _a2 = f.join("a");
        f.hub.heartbeat(&a1.session.session_id, Availability::Away).unwrap();
        let b = f.join("b");
        f.hub.heartbeat(&b.session.session_id, Availability::Away).unwrap();
        let c = f.join("c");
        f.hub.heartbeat(&c.session.session_id, Availability::Busy).unwrap();
        let roster = f.hub.presence_roster(&dp).unwrap();
        let view: Vec<_> = roster.iter().map(|r| (r.actor.as_str(), r.availability, r.session_count)).collect();
        assert_eq!(
            view,
            [("a", Availability::Online, 2), ("b", Availability::Away, 1), ("c", Availability::Busy, 1)]
        );
    }

    #[test]
    fn published_ids_are_gapless_and_replayable() {
        let mut f = fixture();
        let mut a = f.join("a");
        f.publish(5);
        let ids: Vec<u64> = drain(&mut a.receiver).iter().map(|e| e.event_id).collect();
        assert_eq!(ids, [1, 2, 3, 4, 5]);
        let dp = f.dp.clone();
        assert_eq!(f.hub.replay_since(&dp, 0).unwrap().len(), 5);
        assert!(f.hub.replay_since(&dp, 5).unwrap().is_empty());
        let tail: Vec<u64> = f.hub.replay_since(&dp, 3).unwrap().iter().map(|e| e.event_id).collect();
        assert_eq!(tail, [4, 5]);
    }

    #[test]
    fn presence_cannot_be_published() {
        let mut f = fixture();
        let stamp = TemporalStamp::new(f.clock.now(), 1);
        let err = f
            .hub
            .publish_event(EventKind::Presence, ActorId::new("a"), f.dp.clone(), "joined", stamp)
            .unwrap_err();
        assert!(matches!(err, Error::ReservedEventKind(EventKind::Presence)));
        assert_eq!(f.hub.logs().latest(&f.dp), 0);
    }

    #[test]
    fn unknown_workspace_is_rejected() {
        let mut f = fixture();
        assert!(matches!(
            f.hub.join(ActorId::new("a"), DpId::new("dp-404")),
            Err(Error::UnknownProblem(_))
        ));
        assert!(f.hub.replay_since(&DpId::new("dp-404"), 0).is_err());
    }

    #[test]
    fn stitching_replay_and_live_covers_the_log_once() {
        let mut f = fixture();
        f.publish(3);
        let mut t = f.join("a");
        f.publish(4);
        let mut transcript = f.hub.replay_since(&f.dp.clone(), 0).unwrap();
        transcript.truncate(t.high_water as usize);
        transcript.extend(drain(&mut t.receiver));
        assert_eq!(transcript, f.hub.replay_since(&f.dp.clone(), 0).unwrap());
    }
}
