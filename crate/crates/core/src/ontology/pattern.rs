//! The closed predicate language criteria use to accept notes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::values::{AttrValue, Confidence, Intensity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareOp {
    Eq,
    Lt,
    Le,
    Gt,
    Ge,
    In,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PatternValue {
    Number(f64),
    Text(String),
    List(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributePredicate {
    pub name: String,
    pub op: CompareOp,
    pub value: PatternValue,
}

impl AttributePredicate {
    /// Whether the operator/value pairing is well-typed.
    pub fn is_well_formed(&self) -> bool {
        matches!(
            (self.op, &self.value),
            (CompareOp::Eq, PatternValue::Number(_) | PatternValue::Text(_))
                | (
                    CompareOp::Lt | CompareOp::Le | CompareOp::Gt | CompareOp::Ge,
                    PatternValue::Number(_)
                )
                | (CompareOp::In, PatternValue::List(_))
        ) && !matches!(self.value, PatternValue::Number(n) if !n.is_finite())
    }

    pub fn accepts(&self, value: &AttrValue) -> bool {
        if value.is_conflicted() {
            return false;
        }
        match (&self.value, self.op) {
            (PatternValue::Number(rhs), op) => {
                let Some(lhs) = value.as_number() else {
                    return false;
                };
                match op {
                    CompareOp::Eq => lhs == *rhs,
                    CompareOp::Lt => lhs < *rhs,
                    CompareOp::Le => lhs <= *rhs,
                    CompareOp::Gt => lhs > *rhs,
                    CompareOp::Ge => lhs >= *rhs,
                    CompareOp::In => false,
                }
            }
            (PatternValue::Text(rhs), CompareOp::Eq) => value.as_str() == Some(rhs.as_str()),
            (PatternValue::List(items), CompareOp::In) => value
                .as_str()
                .is_some_and(|s| items.iter().any(|item| item == s)),
            _ => false,
        }
    }
}

/// A conjunction of predicates over a note's fields. An empty pattern accepts
/// every note.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NotePattern {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relationship: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity_at_least: Option<Intensity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity_at_most: Option<Intensity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_at_least: Option<Confidence>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attributes: Vec<AttributePredicate>,
}

/// The fields of a note a pattern can see.
#[derive(Debug, Clone, Copy)]
pub struct NoteShape<'a> {
    pub entity: &'a str,
    pub relationship: &'a str,
    pub intensity: Intensity,
    pub confidence: Confidence,
    pub attributes: &'a BTreeMap<String, AttrValue>,
}

impl NotePattern {
    pub fn for_action(entity: &str, relationship: &str) -> Self {
        NotePattern {
            entity: Some(entity.to_string()),
            relationship: Some(relationship.to_string()),
            ..NotePattern::default()
        }
    }

    pub fn matches(&self, note: NoteShape<'_>) -> bool {
        if self.entity.as_deref().is_some_and(|e| e != note.entity) {
            return false;
        }
        if self
            .relationship
            .as_deref()
            .is_some_and(|r| r != note.relationship)
        {
            return false;
        }
        if self.intensity_at_least.is_some_and(|lo| note.intensity < lo) {
            return false;
        }
        if self.intensity_at_most.is_some_and(|hi| note.intensity > hi) {
            return false;
        }
        if self
            .confidence_at_least
            .is_some_and(|lo| note.confidence < lo)
        {
            return false;
        }
        self.attributes.iter().all(|pred| {
            note.attributes
                .get(&pred.name)
                .is_some_and(|value| pred.accepts(value))
        })
    }
}
