//! Value types shared by notes, patterns and refinement.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intensity {
    Rare,
    Occasional,
    Frequent,
    VeryFrequent,
}

impl Intensity {
    pub const ALL: [Intensity; 4] = [
        Intensity::Rare,
        Intensity::Occasional,
        Intensity::Frequent,
        Intensity::VeryFrequent,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    Low,
    Medium,
    High,
}

impl Confidence {
    pub const ALL: [Confidence; 3] = [Confidence::Low, Confidence::Medium, Confidence::High];
}

/// A numeric amount with an optional unit (`None` for plain counts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Amount {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

impl Amount {
    pub fn new(value: f64, unit: Option<&str>) -> Self {
        Amount {
            value,
            unit: unit.map(str::to_string),
        }
    }

    pub fn count(value: f64) -> Self {
        Amount { value, unit: None }
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.unit {
            Some(unit) => write!(f, "{} {}", self.value, unit),
            None => write!(f, "{}", self.value),
        }
    }
}

/// An attribute value carried by annotations and notes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum AttrValue {
    Amount(Amount),
    Category(String),
    Text(String),
    /// Produced by the majority rule on a tie; fails every pattern predicate.
    Conflicted,
}

impl AttrValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            AttrValue::Amount(a) => Some(a.value),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            AttrValue::Category(s) | AttrValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_conflicted(&self) -> bool {
        matches!(self, AttrValue::Conflicted)
    }

    /// Key used for equality-based grouping (modal values, agreement).
    pub fn group_key(&self) -> String {
        match self {
            AttrValue::Amount(a) => format!("n:{}:{}", a.value, a.unit.as_deref().unwrap_or("")),
            AttrValue::Category(s) => format!("c:{s}"),
            AttrValue::Text(s) => format!("t:{s}"),
            AttrValue::Conflicted => "x".to_string(),
        }
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Amount(a) => a.fmt(f),
            AttrValue::Category(s) | AttrValue::Text(s) => f.write_str(s),
            AttrValue::Conflicted => f.write_str("<conflicted>"),
        }
    }
}
