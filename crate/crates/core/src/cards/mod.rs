//! Criterion cards: scoring refined notes against concept criteria, holding
//! premature cards, and committing them through a single manager that applies
//! exclusion rules.

mod db;
mod maker;
mod manager;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::notes::Note;
use crate::ontology::{ConceptDef, OntologySpec};
use crate::time::Instant;

pub use db::{CardDb, LogRecord};
pub use maker::CardMaker;
pub use manager::{
    commit_card, complete_remake, detect_conflicts, process, request_remake, resolve_conflict, Conflict,
    ProcessReport, RemakeTicket,
};

#[derive(Debug, Error)]
pub enum CardError {
    #[error("card {card_id} meets {met} criteria, below the threshold of {threshold}")]
    BelowThreshold { card_id: String, met: u32, threshold: u32 },
    #[error("card {card_id} is blocked by exclusion rule {rule_id} against {counterpart}")]
    Blocked {
        card_id: String,
        rule_id: String,
        counterpart: String,
    },
    #[error("unknown card `{0}`")]
    UnknownCard(String),
    #[error("card {0} is not committed")]
    NotCommitted(String),
    #[error("unknown concept `{0}`")]
    UnknownConcept(String),
    #[error("remake of {card_id} is not ready until {ready_at}")]
    RemakeTooEarly { card_id: String, ready_at: Instant },
    #[error(transparent)]
    Store(#[from] crate::jsonl::JsonlError),
    #[error("card index does not match the replayed log")]
    IndexMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CardStatus {
    Premature,
    Committed,
    Expired,
    Superseded,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimension {
    pub score: u32,
    /// Sorted refined-note ids.
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validity {
    pub start: Option<Instant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<Instant>,
}

impl Validity {
    /// Half-open overlap; a missing end is open-ended and a missing start
    /// never overlaps anything.
    pub fn overlaps(&self, other: &Validity) -> bool {
        let (Some(a), Some(b)) = (self.start, other.start) else {
            return false;
        };
        self.end.is_none_or(|e| b < e) && other.end.is_none_or(|e| a < e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ConflictDetected,
    Expired,
    RemakeRequested,
    RemakeCompleted,
    Committed,
    Flagged,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventDetail {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterpart: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningEvent {
    pub kind: EventKind,
    pub timestamp: Instant,
    pub detail: EventDetail,
}

impl ReasoningEvent {
    pub fn new(kind: EventKind, timestamp: Instant) -> Self {
        ReasoningEvent {
            kind,
            timestamp,
            detail: EventDetail::default(),
        }
    }

    pub fn rule(mut self, rule_id: &str) -> Self {
        self.detail.rule_id = Some(rule_id.to_string());
        self
    }

    pub fn counterpart(mut self, card_id: &str) -> Self {
        self.detail.counterpart = Some(card_id.to_string());
        self
    }

    pub fn message(mut self, text: impl Into<String>) -> Self {
        self.detail.message = Some(text.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Card {
    pub card_id: String,
    pub concept_id: String,
    pub subject: String,
    pub revision: u32,
    /// Keyed by criterion index; every criterion of the concept is present.
    pub dimensions: BTreeMap<u32, Dimension>,
    pub criteria_met: u32,
    pub threshold: u32,
    pub min_score_per_criterion: u32,
    pub status: CardStatus,
    pub validity: Validity,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub flagged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superseded_by: Option<String>,
    #[serde(default)]
    pub reasoning_trail: Vec<ReasoningEvent>,
}

pub fn card_id(concept_id: &str, subject: &str, revision: u32) -> String {
    format!("{concept_id}@{subject}#{revision}")
}

impl Card {
    pub fn new(concept: &ConceptDef, subject: &str, revision: u32) -> Self {
        Card {
            card_id: card_id(&concept.concept_id, subject, revision),
            concept_id: concept.concept_id.clone(),
            subject: subject.to_string(),
            revision,
            dimensions: concept.criteria.iter().map(|c| (c.index, Dimension::default())).collect(),
            criteria_met: 0,
            threshold: concept.threshold,
            min_score_per_criterion: concept.min_score_per_criterion,
            status: CardStatus::Premature,
            validity: Validity::default(),
            flagged: false,
            supersedes: None,
            superseded_by: None,
            reasoning_trail: Vec::new(),
        }
    }

    /// Adds one piece of evidence to a criterion; repeats are ignored.
    pub fn add_evidence(&mut self, criterion: u32, refined_id: &str) {
        let dim = self.dimensions.entry(criterion).or_default();
        if let Err(at) = dim.evidence.binary_search_by(|e| e.as_str().cmp(refined_id)) {
            dim.evidence.insert(at, refined_id.to_string());
        }
        self.rescore();
    }

    fn rescore(&mut self) {
        let (_, met) = score_card(self);
        for dim in self.dimensions.values_mut() {
            dim.score = dim.evidence.len() as u32;
        }
        self.criteria_met = met;
    }

    pub fn meets_threshold(&self) -> bool {
        self.criteria_met >= self.threshold
    }

    pub fn evidence_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self
            .dimensions
            .values()
            .flat_map(|d| d.evidence.iter().map(String::as_str))
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn push_event(&mut self, event: ReasoningEvent) {
        self.reasoning_trail.push(event);
    }
}

/// Per-criterion evidence counts (in criterion order) and the met count,
/// recomputed from the evidence lists.
pub fn score_card(card: &Card) -> (Vec<u32>, u32) {
    let scores: Vec<u32> = card.dimensions.values().map(|d| d.evidence.len() as u32).collect();
    let met = scores.iter().filter(|s| **s >= card.min_score_per_criterion.max(1)).count() as u32;
    (scores, met)
}

/// Every (concept, criterion index) whose patterns accept the note.
pub fn map_note_to_criteria(note: &Note, spec: &OntologySpec) -> Vec<(String, u32)> {
    let shape = note.shape();
    let mut out = Vec::new();
    for concept in &spec.concepts {
        for criterion in &concept.criteria {
            if criterion.match_patterns.iter().any(|p| p.matches(shape)) {
                out.push((concept.concept_id.clone(), criterion.index));
            }
        }
    }
    out
}
