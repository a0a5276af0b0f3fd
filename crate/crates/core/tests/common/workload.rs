//! Random operation sequences against a service, with a model of what was
//! written and of what each validation should return.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use kcap_core::annotation::{Anchor, AnchorTarget, AnnotationDraft, FragmentLocator};
use kcap_core::awareness::ManualClock;
use kcap_core::domain::Role;
use kcap_core::ids::{ActorId, DpId, KrId, KrRef};
use kcap_core::repository::KrKind;
use kcap_core::{Error, KnowledgeService, ServiceConfig};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Value};

pub const VOCABULARY: &[&str] = &[
    "neco", "exam", "failure", "teaching", "school", "result", "stake", "signal", "ministry", "report",
    "candidate", "grade", "region", "press", "budget",
];

pub fn service() -> KnowledgeService {
    KnowledgeService::in_memory(ServiceConfig::default(), Arc::new(ManualClock::default())).unwrap()
}

pub fn phrase(rng: &mut StdRng, len: usize) -> String {
    (0..len)
        .map(|_| *VOCABULARY.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelStatus {
    Evolving,
    Validated,
    Superseded,
}

#[derive(Debug, Default)]
pub struct Model {
    /// Every payload written, with the seq of its version row.
    pub written: Vec<(KrRef, Value, u64)>,
    pub lineages: BTreeMap<KrId, Vec<ModelStatus>>,
    pub validations_ok: usize,
    pub validations_rejected: usize,
}

impl Model {
    fn record(&mut self, kr: &kcap_core::repository::KnowledgeResource) {
        self.written.push((kr.kr_ref(), kr.payload.clone(), kr.stamp.seq));
        let statuses = self.lineages.entry(kr.kr_id.clone()).or_default();
        if let Some(last) = statuses.last_mut() {
            *last = ModelStatus::Superseded;
        }
        statuses.push(match kr.kind {
            KrKind::AnnotationRef | KrKind::Feedback | KrKind::PhaseTransition => ModelStatus::Validated,
            _ => ModelStatus::Evolving,
        });
    }
}

pub struct Cast {
    pub dms: Vec<ActorId>,
    pub watchers: Vec<ActorId>,
    pub coordinator: ActorId,
    pub problems: Vec<DpId>,
}

pub fn cast(svc: &KnowledgeService, problems: usize) -> Cast {
    let dms: Vec<ActorId> = (0..2)
        .map(|i| svc.register_actor(&format!("dm{i}"), Role::DecisionMaker).unwrap().actor_id)
        .collect();
    let watchers = (0..2)
        .map(|i| svc.register_actor(&format!("w{i}"), Role::Watcher).unwrap().actor_id)
        .collect();
    let coordinator = svc.register_actor("coord", Role::Coordinator).unwrap().actor_id;
    let problems = (0..problems)
        .map(|i| {
            svc.create_decision_problem(&dms[i % 2], &format!("problem {i}"), &format!("demand {i} neco failure"), "in", "out")
                .unwrap()
                .dp_id
        })
        .collect();
    Cast { dms, watchers, coordinator, problems }
}

/// Declarations, appends and validations only; at least `min_lineages`
/// lineages are declared along the way.
pub fn repository_interleaving(svc: &KnowledgeService, rng: &mut StdRng, min_lineages: usize, extra_ops: usize) -> Model {
    let cast = cast(svc, 2);
    let mut model = Model::default();
    // Lineages opened by problem creation belong to the model too.
    for kr in svc.repository().newest_versions() {
        model.record(&kr);
    }
    let mut ops: Vec<u8> = std::iter::repeat_n(0, min_lineages).collect();
    ops.extend((0..extra_ops).map(|_| rng.gen_range(0..4)));
    ops.shuffle(rng);
    for op in ops {
        let dp = cast.problems.choose(rng).unwrap().clone();
        let lineage_ids: Vec<KrId> = model.lineages.keys().cloned().collect();
        match op {
            0 => {
                let kr = svc
                    .declare(cast.dms.choose(rng).unwrap(), KrKind::Declaration, json!({"text": phrase(rng, 4), "n": rng.gen_range(0..1000)}), &dp)
                    .unwrap();
                model.record(&kr);
            }
            1 => {
                let kr_id = lineage_ids.choose(rng).unwrap();
                let lineage = svc.repository().lineage(kr_id).unwrap().clone();
                let payload = match lineage.kind {
                    KrKind::StakeDefinition => json!({"observed_object": phrase(rng, 2), "signal": phrase(rng, 2), "hypothesis": phrase(rng, 3)}),
                    _ => json!({"text": phrase(rng, 4)}),
                };
                let author = if lineage.kind == KrKind::StakeDefinition {
                    cast.watchers.choose(rng).unwrap()
                } else {
                    cast.dms.choose(rng).unwrap()
                };
                let kr = svc.append_version(author, kr_id, payload).unwrap();
                model.record(&kr);
            }
            2 => {
                let stake = svc
                    .define_stake(cast.watchers.choose(rng).unwrap(), &dp, &phrase(rng, 2), &phrase(rng, 2), &phrase(rng, 3))
                    .unwrap();
                model.record(&stake.kr);
            }
            _ => {
                let kr_id = lineage_ids.choose(rng).unwrap();
                let statuses = model.lineages[kr_id].clone();
                let version = rng.gen_range(1..=statuses.len() as u32);
                let result = svc.validate(&cast.dms[0], kr_id, version);
                let newest = statuses.len() as u32;
                match (version == newest, statuses[newest as usize - 1]) {
                    (false, _) => assert!(matches!(result, Err(Error::StaleVersion { .. })), "{result:?}"),
                    (true, ModelStatus::Evolving) => {
                        result.unwrap();
                        *model.lineages.get_mut(kr_id).unwrap().last_mut().unwrap() = ModelStatus::Validated;
                    }
                    (true, _) => assert!(matches!(result, Err(Error::AlreadyValidated { .. })), "{result:?}"),
                }
                if version == newest && statuses[newest as usize - 1] == ModelStatus::Evolving {
                    model.validations_ok += 1;
                } else {
                    model.validations_rejected += 1;
                }
            }
        }
    }
    model
}

/// Every kind of mutating operation, including annotations, feedback, phase
/// advances and workspace events.
pub fn mixed_workload(svc: &KnowledgeService, rng: &mut StdRng, steps: usize) -> Cast {
    let cast = cast(svc, 3);
    let mut annotations = Vec::new();
    for _ in 0..steps {
        let dp = cast.problems.choose(rng).unwrap().clone();
        let watcher = cast.watchers.choose(rng).unwrap().clone();
        let dm = cast.dms.choose(rng).unwrap().clone();
        match rng.gen_range(0..9) {
            0 => {
                svc.declare(&dm, KrKind::Declaration, json!({"text": phrase(rng, 5)}), &dp).unwrap();
            }
            1 => {
                svc.define_stake(&watcher, &dp, &phrase(rng, 2), &phrase(rng, 2), &phrase(rng, 3)).unwrap();
            }
            2 => {
                if let Some(stake) = svc.current_stake(&dp).unwrap() {
                    let _ = svc.validate(&dm, &stake.kr.kr_id, stake.kr.version);
                }
            }
            3 => {
                let _ = svc.advance_phase(&cast.coordinator, &dp);
            }
            4 => {
                let doc = svc.problem(&dp).unwrap().initial_demand;
                let text = svc.document(&doc).unwrap().content;
                let len = text.chars().count();
                let start = rng.gen_range(0..len - 1);
                let end = rng.gen_range(start + 1..=len);
                let anchor = Anchor::fragment(
                    AnchorTarget::Document(doc),
                    FragmentLocator::capture(&text, vec![], start, end).unwrap(),
                );
                let draft = AnnotationDraft::new(phrase(rng, 3)).with_attribute(VOCABULARY.choose(rng).unwrap(), &phrase(rng, 1));
                annotations.push(svc.create_annotation(&watcher, &dp, &anchor, draft).unwrap().annotation_id);
            }
            5 => {
                if let Some(parent) = annotations.choose(rng) {
                    let ann = svc.follow_up(&dm, parent, AnnotationDraft::new(phrase(rng, 2))).unwrap();
                    annotations.push(ann.annotation_id);
                }
            }
            6 => {
                if let Some(source) = annotations.choose(rng) {
                    let doc = svc.problem(&dp).unwrap().initial_demand;
                    let ann = svc
                        .reuse_annotation(&watcher, source, &Anchor::whole_document(doc), Some(phrase(rng, 2)), None)
                        .unwrap();
                    annotations.push(ann.annotation_id);
                }
            }
            7 => {
                let items: Vec<KrRef> = svc.repository().newest_versions().map(|k| k.kr_ref()).collect();
                let item = items.choose(rng).unwrap();
                svc.record_feedback(&watcher, item, rng.gen_range(1..=5), None, None).unwrap();
            }
            _ => {
                svc.publish_event(kcap_core::awareness::EventKind::Workspace, &dm, &dp, &phrase(rng, 2)).unwrap();
            }
        }
    }
    cast
}
