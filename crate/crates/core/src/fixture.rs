//! Built-in scenario fixtures.

use serde::{Deserialize, Serialize};

use crate::annotation::{Anchor, AnchorTarget, AnnotationDraft, FragmentLocator};
use crate::domain::Role;
use crate::error::{Error, Result};
use crate::ids::{ActorId, AnnotationId, DpId, KrId};
use crate::service::KnowledgeService;

pub const NECO_DEMAND: &str = "98% of candidates failed the examination set by the National \
Examination Council (NECO) for the General Certificate of Education.\n\n\
The ministry requests an explanation before the next session and a decision on \
corrective measures.";

const NECO_QUOTE: &str = "98% of candidates failed";

/// What a fixture created.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSummary {
    pub fixture: String,
    pub decision_maker: ActorId,
    pub watcher: ActorId,
    pub coordinator: ActorId,
    /// Bearer tokens in the order decision maker, watcher, coordinator, when
    /// tokens were supplied.
    pub tokens: Option<[String; 3]>,
    pub dp_id: DpId,
    pub stake_lineage: KrId,
    pub thread_root: AnnotationId,
    pub thread_size: usize,
}

impl KnowledgeService {
    /// Seeds a named fixture. Seeding is not idempotent: each run creates a
    /// fresh, independent set of actors and a new decision problem.
    pub fn seed_fixture(&self, name: &str, tokens: Option<[String; 3]>) -> Result<FixtureSummary> {
        match name {
            "neco" => self.seed_neco(tokens),
            other => Err(Error::UnknownFixture(other.to_owned())),
        }
    }

    fn seed_neco(&self, tokens: Option<[String; 3]>) -> Result<FixtureSummary> {
        let register = |name: &str, role: Role, idx: usize| match &tokens {
            Some(t) => self.register_actor_with_token(name, role, &t[idx]),
            None => self.register_actor(name, role),
        };
        let dm = register("Ministry director", Role::DecisionMaker, 0)?.actor_id;
        let watcher = register("Education watcher", Role::Watcher, 1)?.actor_id;
        let coordinator = register("Watch coordinator", Role::Coordinator, 2)?.actor_id;

        let dp = self.create_decision_problem(
            &dm,
            "NECO failure",
            NECO_DEMAND,
            "Examination results, teaching staff records, school inspection reports",
            "Press coverage, parents' associations, regional examination boards",
        )?;
        let stake = self.define_stake(
            &watcher,
            &dp.dp_id,
            "NECO GCE results",
            "98% failure rate",
            "systemic teaching deficiency",
        )?;

        let start = NECO_DEMAND.find(NECO_QUOTE).expect("quote is in the demand");
        let end = start + NECO_QUOTE.chars().count();
        let locator = FragmentLocator::capture(NECO_DEMAND, Vec::new(), start, end)?;
        let root = self.create_annotation(
            &watcher,
            &dp.dp_id,
            &Anchor::fragment(AnchorTarget::Document(dp.initial_demand.clone()), locator),
            AnnotationDraft::new("This failure rate is far outside previous sessions; the hypothesis targets teaching.")
                .with_attribute("severity", "critical"),
        )?;
        let objection = self.follow_up(
            &dm,
            &root.annotation_id,
            AnnotationDraft::new("Teaching alone does not explain a national collapse; check the examination itself.")
                .with_attribute("status", "objection"),
        )?;
        let revision = self.follow_up(
            &watcher,
            &objection.annotation_id,
            AnnotationDraft::new("Revised stake: the hypothesis now covers the examination conditions.")
                .with_attribute("status", "revision"),
        )?;
        let v2 = self.define_stake(
            &watcher,
            &dp.dp_id,
            "NECO GCE results",
            "98% failure rate",
            "examination design and conditions combined with teaching deficiency",
        )?;
        self.validate(&dm, &v2.kr.kr_id, v2.kr.version)?;
        self.follow_up(
            &dm,
            &revision.annotation_id,
            AnnotationDraft::new("Agreed, stake validated.").with_attribute("status", "validated"),
        )?;

        let thread = self.list_thread(&root.annotation_id)?;
        Ok(FixtureSummary {
            fixture: "neco".into(),
            decision_maker: dm,
            watcher,
            coordinator,
            tokens,
            dp_id: dp.dp_id,
            stake_lineage: stake.kr.kr_id,
            thread_root: root.annotation_id,
            thread_size: thread.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::awareness::ManualClock;
    use crate::config::ServiceConfig;
    use crate::repository::KrStatus;
    use std::sync::Arc;

    fn service() -> KnowledgeService {
        KnowledgeService::in_memory(ServiceConfig::default(), Arc::new(ManualClock::default())).unwrap()
    }

    #[test]
    fn neco_seeds_the_scenario() {
        let svc = service();
        let summary = svc.seed_fixture("neco", None).unwrap();
        assert_eq!(svc.actors().len(), 3);
        assert_eq!(svc.problems().len(), 1);
        let dp = svc.problem(&summary.dp_id).unwrap();
        assert!(svc.document(&dp.initial_demand).unwrap().content.contains("98% of candidates failed the examination"));
        let stake = svc.current_stake(&summary.dp_id).unwrap().unwrap();
        assert_eq!((stake.kr.version, stake.kr.status), (2, KrStatus::Validated));
        let thread = svc.list_thread(&summary.thread_root).unwrap();
        assert!(thread.len() >= 3);
        assert_eq!(thread.depth(), 3);
        let root = &thread.annotation;
        assert_eq!(root.attribute("severity"), Some("critical"));
        assert_eq!(root.anchor.fragment.as_ref().unwrap().context_quote.exact, "98% of candidates failed");
        assert_eq!(thread.children[0].annotation.attribute("status"), Some("objection"));
    }

    #[test]
    fn unknown_fixture() {
        assert!(matches!(service().seed_fixture("x", None), Err(Error::UnknownFixture(_))));
    }

    #[test]
    fn seeding_twice_creates_independent_problems() {
        let svc = service();
        let a = svc.seed_fixture("neco", None).unwrap();
        let b = svc.seed_fixture("neco", None).unwrap();
        assert_ne!(a.dp_id, b.dp_id);
        assert_eq!(svc.problems().len(), 2);
        assert_eq!(svc.actors().len(), 6);
    }

    #[test]
    fn tokens_are_bound_to_fixture_actors() {
        let svc = service();
        let tokens = ["t-dm".to_string(), "t-w".to_string(), "t-c".to_string()];
        let summary = svc.seed_fixture("neco", Some(tokens)).unwrap();
        assert_eq!(svc.authenticate("t-w").unwrap().actor_id, summary.watcher);
    }
}
