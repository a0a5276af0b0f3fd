//! Actors, roles, process phases, decision problems and stakes.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ids::{ActorId, DocUri, DpId};
use crate::repository::TemporalStamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    DecisionMaker,
    Watcher,
    Coordinator,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::DecisionMaker, Role::Watcher, Role::Coordinator];

    pub fn may_author_declaration(self) -> bool {
        self == Role::DecisionMaker
    }

    pub fn may_define_stake(self) -> bool {
        matches!(self, Role::DecisionMaker | Role::Watcher)
    }

    pub fn may_validate(self) -> bool {
        self == Role::DecisionMaker
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// The workflow phases. Protection is not a step of the linear workflow; it
/// is realized as the role gates on every operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EiPhase {
    Translation,
    SearchRetrieval,
    Analysis,
    Decision,
    Protection,
}

impl EiPhase {
    pub const ALL: [EiPhase; 5] = [
        EiPhase::Translation,
        EiPhase::SearchRetrieval,
        EiPhase::Analysis,
        EiPhase::Decision,
        EiPhase::Protection,
    ];

    /// Successor in the workflow chain. `None` at the terminal phase and for
    /// Protection, which has no position in the chain.
    pub fn next(self) -> Option<EiPhase> {
        match self {
            EiPhase::Translation => Some(EiPhase::SearchRetrieval),
            EiPhase::SearchRetrieval => Some(EiPhase::Analysis),
            EiPhase::Analysis => Some(EiPhase::Decision),
            EiPhase::Decision | EiPhase::Protection => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EiPhase::Translation => "Translation",
            EiPhase::SearchRetrieval => "SearchRetrieval",
            EiPhase::Analysis => "Analysis",
            EiPhase::Decision => "Decision",
            EiPhase::Protection => "Protection",
        }
    }
}

impl fmt::Display for EiPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actor {
    pub actor_id: ActorId,
    pub display_name: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionProblem {
    pub dp_id: DpId,
    pub title: String,
    pub initial_demand: DocUri,
    pub internal_context: String,
    pub external_context: String,
    pub current_phase: EiPhase,
    pub created_by: ActorId,
    pub created_at: TemporalStamp,
}

/// Observed object, signal and hypothesis that make a decision problem explicit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stake {
    pub observed_object: String,
    pub signal: String,
    pub hypothesis: String,
    pub dp_id: DpId,
    pub defined_by: ActorId,
}

impl Stake {
    pub fn check_complete(&self) -> Result<()> {
        require_text("observed_object", &self.observed_object)?;
        require_text("signal", &self.signal)?;
        require_text("hypothesis", &self.hypothesis)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_uri: DocUri,
    pub content: String,
    pub content_hash: String,
    pub created_at: TemporalStamp,
    /// Owning decision problem, if the document was added to a workspace.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp_id: Option<DpId>,
}

impl Document {
    pub fn hash_content(content: &str) -> String {
        hex::encode(Sha256::digest(content.as_bytes()))
    }

    pub fn hash_matches(&self) -> bool {
        Self::hash_content(&self.content) == self.content_hash
    }
}

pub(crate) fn require_text(field: &'static str, value: &str) -> Result<()> {
    if value.trim().is_empty() {
        Err(Error::EmptyField(field))
    } else {
        Ok(())
    }
}
