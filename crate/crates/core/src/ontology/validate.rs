//! Structural quality checks over a loaded spec.
//!
//! Findings are data: a report with errors still describes a spec that loaded.
//! Completeness asks whether each criterion can be met by some note a template
//! is able to produce; conciseness flags gazetteer entries no template uses;
//! clarity flags missing descriptions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Aggregation, ClassDef, CompareOp, Kind, NotePattern, NoteTemplate, OntologySpec, PatternValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingCheck {
    Completeness,
    Conciseness,
    Clarity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub check: FindingCheck,
    /// What the finding is about, e.g. `criterion 301.4-5`.
    pub subject: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ontology: String,
    pub findings: Vec<Finding>,
    /// Evaluation dimensions with no structural test.
    pub not_checked: Vec<String>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Warning)
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }
}

pub fn validate_ontology(spec: &OntologySpec) -> ValidationReport {
    let mut findings = Vec::new();
    completeness(spec, &mut findings);
    conciseness(spec, &mut findings);
    clarity(spec, &mut findings);
    findings.sort_by(|a, b| (a.severity, a.check, &a.subject).cmp(&(b.severity, b.check, &b.subject)));
    ValidationReport {
        ontology: format!("{}@{}", spec.id, spec.version),
        findings,
        not_checked: vec!["cognitive_adequacy".to_string(), "grounding".to_string()],
    }
}

fn completeness(spec: &OntologySpec, out: &mut Vec<Finding>) {
    for concept in &spec.concepts {
        for criterion in &concept.criteria {
            let subject = format!("criterion {}-{}", concept.concept_id, criterion.index);
            let satisfiable: Vec<bool> = criterion
                .match_patterns
                .iter()
                .map(|p| spec.note_templates.iter().any(|t| pattern_satisfiable_by(spec, p, t)))
                .collect();
            if !satisfiable.iter().any(|&s| s) {
                out.push(Finding {
                    severity: Severity::Error,
                    check: FindingCheck::Completeness,
                    subject,
                    message: "no note any template can produce satisfies a match pattern".into(),
                });
            } else {
                for (i, _) in satisfiable.iter().enumerate().filter(|(_, s)| !**s) {
                    out.push(Finding {
                        severity: Severity::Warning,
                        check: FindingCheck::Completeness,
                        subject: subject.clone(),
                        message: format!("match pattern {} can never be satisfied", i + 1),
                    });
                }
            }
        }
    }
}

fn conciseness(spec: &OntologySpec, out: &mut Vec<Finding>) {
    let used: BTreeSet<(Kind, &str)> = spec
        .note_templates
        .iter()
        .flat_map(|t| {
            [
                (Kind::Entity, t.trigger.entity.as_str()),
                (Kind::Relationship, t.trigger.relationship.as_str()),
            ]
        })
        .collect();
    let persons = spec.person_classes();
    for entry in &spec.dictionary {
        let person = entry.kind == Kind::Entity && persons.contains(entry.canonical_id.as_str());
        if !person && !used.contains(&(entry.kind, entry.canonical_id.as_str())) {
            out.push(Finding {
                severity: Severity::Warning,
                check: FindingCheck::Conciseness,
                subject: format!("dictionary `{}`", entry.surface_form),
                message: format!(
                    "maps to `{}`, which no note template triggers on",
                    entry.canonical_id
                ),
            });
        }
    }
}

fn clarity(spec: &OntologySpec, out: &mut Vec<Finding>) {
    let mut flag = |subject: String| {
        out.push(Finding {
            severity: Severity::Warning,
            check: FindingCheck::Clarity,
            subject,
            message: "description is empty".into(),
        })
    };
    let classes = |cs: &[ClassDef], kind: &str, flag: &mut dyn FnMut(String)| {
        for c in cs.iter().filter(|c| c.description.trim().is_empty()) {
            flag(format!("{kind} `{}`", c.id));
        }
    };
    classes(&spec.entity_classes, "entity class", &mut flag);
    classes(&spec.relationship_classes, "relationship class", &mut flag);
    for concept in &spec.concepts {
        if concept.name.trim().is_empty() {
            flag(format!("concept `{}`", concept.concept_id));
        }
        for c in concept.criteria.iter().filter(|c| c.description.trim().is_empty()) {
            flag(format!("criterion {}-{}", concept.concept_id, c.index));
        }
    }
}

/// Value domain a template gives an attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Domain {
    /// Non-negative reals: amounts are read from unsigned numerals.
    Number,
    Text,
}

fn domain(spec: &OntologySpec, template: &NoteTemplate, name: &str) -> Option<Domain> {
    let agg = template.attribute_aggregations.get(name)?;
    if *agg == Aggregation::Count {
        return Some(Domain::Number);
    }
    let attr = spec.action_attribute(&template.trigger, name)?;
    Some(if attr.kind.is_numeric() {
        Domain::Number
    } else {
        Domain::Text
    })
}

#[derive(Debug, Clone, Copy)]
struct Bound {
    value: f64,
    inclusive: bool,
}

/// Whether some note produced by `template` satisfies `pattern`.
pub fn pattern_satisfiable_by(spec: &OntologySpec, pattern: &NotePattern, template: &NoteTemplate) -> bool {
    if pattern.entity.as_ref().is_some_and(|e| *e != template.trigger.entity)
        || pattern
            .relationship
            .as_ref()
            .is_some_and(|r| *r != template.trigger.relationship)
    {
        return false;
    }
    if let (Some(lo), Some(hi)) = (pattern.intensity_at_least, pattern.intensity_at_most) {
        if lo > hi {
            return false;
        }
    }

    let mut by_name: BTreeMap<&str, Vec<(CompareOp, &PatternValue)>> = BTreeMap::new();
    for pred in &pattern.attributes {
        by_name.entry(&pred.name).or_default().push((pred.op, &pred.value));
    }
    by_name.into_iter().all(|(name, preds)| match domain(spec, template, name) {
        None => false,
        Some(Domain::Number) => numeric_satisfiable(&preds),
        Some(Domain::Text) => text_satisfiable(&preds),
    })
}

fn numeric_satisfiable(preds: &[(CompareOp, &PatternValue)]) -> bool {
    let mut lower = Bound { value: 0.0, inclusive: true };
    let mut upper: Option<Bound> = None;
    let raise = |b: Bound, lower: &mut Bound| {
        if b.value > lower.value || (b.value == lower.value && !b.inclusive) {
            *lower = b;
        }
    };
    let lower_upper = |b: Bound, upper: &mut Option<Bound>| match upper {
        Some(u) if b.value > u.value || (b.value == u.value && b.inclusive) => {}
        _ => *upper = Some(b),
    };
    for (op, value) in preds {
        let PatternValue::Number(v) = value else {
            return false;
        };
        let v = *v;
        match op {
            CompareOp::Eq => {
                raise(Bound { value: v, inclusive: true }, &mut lower);
                lower_upper(Bound { value: v, inclusive: true }, &mut upper);
            }
            CompareOp::Gt => raise(Bound { value: v, inclusive: false }, &mut lower),
            CompareOp::Ge => raise(Bound { value: v, inclusive: true }, &mut lower),
            CompareOp::Lt => lower_upper(Bound { value: v, inclusive: false }, &mut upper),
            CompareOp::Le => lower_upper(Bound { value: v, inclusive: true }, &mut upper),
            CompareOp::In => return false,
        }
    }
    match upper {
        None => true,
        Some(u) => lower.value < u.value || (lower.value == u.value && lower.inclusive && u.inclusive),
    }
}

fn text_satisfiable(preds: &[(CompareOp, &PatternValue)]) -> bool {
    // `None` stands for "any string".
    let mut allowed: Option<BTreeSet<&str>> = None;
    for (op, value) in preds {
        let set: BTreeSet<&str> = match (op, value) {
            (CompareOp::Eq, PatternValue::Text(s)) => [s.as_str()].into(),
            (CompareOp::In, PatternValue::List(items)) => items.iter().map(String::as_str).collect(),
            _ => return false,
        };
        allowed = Some(match allowed {
            None => set,
            Some(prev) => prev.intersection(&set).copied().collect(),
        });
    }
    allowed.is_none_or(|s| !s.is_empty())
}
