//! Exploitation of the repository: vocabulary exploration, case-based
//! retrieval with roles as cases, aggregate indicators, and item-based
//! collaborative filtering over actor feedback.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::annotation::AnnotationStore;
use crate::domain::{EiPhase, Role};
use crate::error::{Error, Result};
use crate::ids::{ActorId, DpId, KrRef};
use crate::repository::{KnowledgeResource, KrKind, KrStatus, Repository, TemporalStamp};

/// Lowercase, split on runs of non-alphanumeric characters. No stemming, no
/// stop words.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Text of every string and number leaf of a payload, keys excluded.
pub fn payload_text(payload: &Value) -> String {
    fn walk(value: &Value, out: &mut String) {
        match value {
            Value::String(s) => {
                out.push_str(s);
                out.push(' ');
            }
            Value::Number(n) => {
                out.push_str(&n.to_string());
                out.push(' ');
            }
            Value::Array(items) => items.iter().for_each(|v| walk(v, out)),
            Value::Object(map) => map.values().for_each(|v| walk(v, out)),
            Value::Bool(_) | Value::Null => {}
        }
    }
    let mut out = String::new();
    walk(payload, &mut out);
    out
}

pub fn kr_tokens(kr: &KnowledgeResource) -> BTreeSet<String> {
    tokenize(&payload_text(&kr.payload))
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalWeights {
    pub role: f64,
    pub phase: f64,
    pub terms: f64,
}

impl Default for RetrievalWeights {
    fn default() -> Self {
        Self {
            role: 0.5,
            phase: 0.2,
            terms: 0.3,
        }
    }
}

impl RetrievalWeights {
    pub fn scaled(self, factor: f64) -> Self {
        Self {
            role: self.role * factor,
            phase: self.phase * factor,
            terms: self.terms * factor,
        }
    }

    pub fn check(&self) -> Result<()> {
        if [self.role, self.phase, self.terms]
            .iter()
            .all(|w| w.is_finite() && *w > 0.0)
        {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "retrieval weights must all be positive".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseQuery {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<EiPhase>,
    #[serde(default)]
    pub terms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp_scope: Option<DpId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub as_of: Option<u64>,
}

impl CaseQuery {
    pub fn term_tokens(&self) -> BTreeSet<String> {
        self.terms.iter().flat_map(|t| tokenize(t)).collect()
    }

    pub fn check(&self) -> Result<()> {
        if self.role.is_none()
            && self.phase.is_none()
            && self.dp_scope.is_none()
            && self.term_tokens().is_empty()
        {
            Err(Error::EmptyQuery)
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub role_component: f64,
    pub phase_component: f64,
    pub term_component: f64,
}

impl ScoreBreakdown {
    pub fn score(&self, weights: &RetrievalWeights) -> f64 {
        weights.role * self.role_component
            + weights.phase * self.phase_component
            + weights.terms * self.term_component
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMatch {
    pub kr: KrRef,
    pub score: f64,
    pub matched_on: ScoreBreakdown,
}

/// Scores one resource against a query. `None` when a criterion the query
/// sets is not met at all: a different role or phase, or no shared term.
pub fn score_case(
    q: &CaseQuery,
    q_tokens: &BTreeSet<String>,
    kr: &KnowledgeResource,
) -> Option<ScoreBreakdown> {
    let indicator = |wanted: bool| if wanted { 1.0 } else { 0.0 };
    let role_component = q.role.map_or(1.0, |r| indicator(kr.author_role == r));
    let phase_component = q.phase.map_or(1.0, |p| indicator(kr.phase == p));
    let term_component = if q_tokens.is_empty() {
        1.0
    } else {
        jaccard(q_tokens, &kr_tokens(kr))
    };
    (role_component > 0.0 && phase_component > 0.0 && term_component > 0.0).then_some(
        ScoreBreakdown {
            role_component,
            phase_component,
            term_component,
        },
    )
}

/// Ranks the newest version of every lineage (as of `q.as_of` when set).
pub fn query(repo: &Repository, q: &CaseQuery, weights: &RetrievalWeights) -> Result<Vec<CaseMatch>> {
    q.check()?;
    let snapshot;
    let view = match q.as_of {
        Some(bound) => {
            snapshot = repo.snapshot_at(bound);
            &snapshot
        }
        None => repo,
    };
    let q_tokens = q.term_tokens();
    let mut ranked: Vec<(CaseMatch, TemporalStamp)> = view
        .newest_versions()
        .filter(|kr| q.dp_scope.as_ref().is_none_or(|dp| &kr.dp_id == dp))
        .filter_map(|kr| {
            let matched_on = score_case(q, &q_tokens, &kr)?;
            let score = matched_on.score(weights);
            (score > 0.0).then(|| {
                (
                    CaseMatch {
                        kr: kr.kr_ref(),
                        score,
                        matched_on,
                    },
                    kr.stamp,
                )
            })
        })
        .collect();
    ranked.sort_by(|(a, sa), (b, sb)| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| sb.cmp(sa))
            .then_with(|| a.kr.kr_id.cmp(&b.kr.kr_id))
    });
    Ok(ranked.into_iter().map(|(m, _)| m).collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VocabularyReport {
    /// Case-folded attribute key -> number of attribute pairs using it.
    pub attribute_keys: BTreeMap<String, usize>,
    pub kinds: BTreeMap<KrKind, usize>,
    pub actors: BTreeMap<ActorId, usize>,
    pub phases: BTreeMap<EiPhase, usize>,
}

/// Facet counts are over every version row ever written.
pub fn explore(repo: &Repository, annotations: &AnnotationStore) -> VocabularyReport {
    let mut report = VocabularyReport::default();
    for pair in annotations.iter().flat_map(|a| &a.attributes) {
        *report.attribute_keys.entry(pair.match_key()).or_default() += 1;
    }
    for kr in repo.all_versions() {
        *report.kinds.entry(kr.kind).or_default() += 1;
        *report.actors.entry(kr.author).or_default() += 1;
        *report.phases.entry(kr.phase).or_default() += 1;
    }
    report
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IndicatorReport {
    pub per_kind: BTreeMap<KrKind, usize>,
    pub per_status: BTreeMap<KrStatus, usize>,
    pub per_actor: BTreeMap<ActorId, usize>,
    pub per_phase: BTreeMap<EiPhase, usize>,
    /// Number of versions -> number of lineages with that many versions.
    pub versions_per_lineage: BTreeMap<u32, usize>,
    /// `(seq, cumulative version rows)` after each version row.
    pub evolution: Vec<(u64, usize)>,
}

pub fn analyze(repo: &Repository, dp_scope: Option<&DpId>) -> IndicatorReport {
    let in_scope = |dp: &DpId| dp_scope.is_none_or(|scope| scope == dp);
    let mut report = IndicatorReport::default();
    for kr in repo.all_versions().filter(|kr| in_scope(&kr.dp_id)) {
        *report.per_kind.entry(kr.kind).or_default() += 1;
        *report.per_status.entry(kr.status).or_default() += 1;
        *report.per_actor.entry(kr.author.clone()).or_default() += 1;
        *report.per_phase.entry(kr.phase).or_default() += 1;
        let total = report.evolution.last().map_or(0, |(_, n)| *n) + 1;
        report.evolution.push((kr.stamp.seq, total));
    }
    for lineage in repo.lineages().filter(|l| in_scope(&l.dp_id)) {
        *report
            .versions_per_lineage
            .entry(lineage.versions.len() as u32)
            .or_default() += 1;
    }
    report
}

/// Payload of a Feedback knowledge resource.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackPayload {
    pub target: KrRef,
    pub rating: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_problem: Option<DpId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub actor: ActorId,
    pub kr: KrRef,
    pub rating: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_problem: Option<DpId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    pub stamp: TemporalStamp,
    /// Where the feedback itself is capitalized.
    pub stored_as: KrRef,
}

pub fn check_rating(rating: i64) -> Result<u8> {
    if (1..=5).contains(&rating) {
        Ok(rating as u8)
    } else {
        Err(Error::RatingOutOfRange(rating))
    }
}

/// Live ratings: the newest version of each (actor, target) feedback lineage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RatingMatrix {
    by_item: BTreeMap<KrRef, BTreeMap<ActorId, f64>>,
    by_actor: BTreeMap<ActorId, BTreeMap<KrRef, f64>>,
}

impl RatingMatrix {
    pub fn from_repository(repo: &Repository) -> Self {
        let mut matrix = Self::default();
        for lineage in repo.lineages().filter(|l| l.kind == KrKind::Feedback) {
            let newest = &lineage.newest().row;
            if let Ok(fb) = serde_json::from_value::<FeedbackPayload>(newest.payload.clone()) {
                matrix.insert(newest.author.clone(), fb.target, fb.rating as f64);
            }
        }
        matrix
    }

    pub fn insert(&mut self, actor: ActorId, item: KrRef, rating: f64) {
        self.by_item
            .entry(item.clone())
            .or_default()
            .insert(actor.clone(), rating);
        self.by_actor.entry(actor).or_default().insert(item, rating);
    }

    pub fn rating(&self, actor: &ActorId, item: &KrRef) -> Option<f64> {
        self.by_actor.get(actor).and_then(|r| r.get(item)).copied()
    }

    pub fn rated_by(&self, actor: &ActorId) -> impl Iterator<Item = (&KrRef, f64)> {
        self.by_actor
            .get(actor)
            .into_iter()
            .flat_map(|r| r.iter().map(|(k, v)| (k, *v)))
    }

    /// Cosine similarity over the actors who rated both items. Zero when fewer
    /// than `min_co_raters` such actors exist.
    pub fn similarity(&self, i: &KrRef, j: &KrRef, min_co_raters: usize) -> f64 {
        let (Some(ri), Some(rj)) = (self.by_item.get(i), self.by_item.get(j)) else {
            return 0.0;
        };
        let (mut dot, mut norm_i, mut norm_j, mut co) = (0.0, 0.0, 0.0, 0usize);
        for (actor, a) in ri {
            if let Some(b) = rj.get(actor) {
                dot += a * b;
                norm_i += a * a;
                norm_j += b * b;
                co += 1;
            }
        }
        if co == 0 || co < min_co_raters || norm_i == 0.0 || norm_j == 0.0 {
            return 0.0;
        }
        dot / (norm_i.sqrt() * norm_j.sqrt())
    }

    /// Weighted average of the actor's ratings over items positively similar
    /// to `item`.
    pub fn predict(&self, actor: &ActorId, item: &KrRef, min_co_raters: usize) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for (j, rating) in self.rated_by(actor) {
            if j == item {
                continue;
            }
            let sim = self.similarity(item, j, min_co_raters);
            if sim > 0.0 {
                num += sim * rating;
                den += sim.abs();
            }
        }
        (den > 0.0).then(|| num / den)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub kr: KrRef,
    /// `None` for recency-fallback entries.
    pub predicted_rating: Option<f64>,
}

/// Newest non-feedback versions the actor has not rated, predicted items
/// first (highest prediction first), then the rest newest first.
pub fn recommend(
    repo: &Repository,
    for_actor: &ActorId,
    limit: usize,
    min_co_raters: usize,
) -> Result<Vec<Recommendation>> {
    if limit == 0 {
        return Err(Error::InvalidLimit);
    }
    let matrix = RatingMatrix::from_repository(repo);
    let mut predicted = Vec::new();
    let mut fallback = Vec::new();
    for kr in repo.newest_versions().filter(|kr| kr.kind != KrKind::Feedback) {
        let item = kr.kr_ref();
        if matrix.rating(for_actor, &item).is_some() {
            continue;
        }
        match matrix.predict(for_actor, &item, min_co_raters) {
            Some(p) => predicted.push((item, p, kr.stamp)),
            None => fallback.push((item, kr.stamp)),
        }
    }
    let by_recency =
        |a: &(KrRef, TemporalStamp), b: &(KrRef, TemporalStamp)| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0));
    predicted.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| by_recency(&(a.0.clone(), a.2), &(b.0.clone(), b.2)))
    });
    fallback.sort_by(by_recency);
    Ok(predicted
        .into_iter()
        .map(|(kr, p, _)| Recommendation {
            kr,
            predicted_rating: Some(p),
        })
        .chain(fallback.into_iter().map(|(kr, _)| Recommendation {
            kr,
            predicted_rating: None,
        }))
        .take(limit)
        .collect())
}
