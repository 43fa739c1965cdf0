//! The declarative ontology package: classes, gazetteer, note templates,
//! criterion-based concepts, refinement policies and exclusion rules.
//!
//! A spec is loaded from a single JSON document, canonicalized (collections
//! sorted, defaults filled in, surface forms folded) and checked. After load it
//! is immutable and can be shared freely between threads.

mod merge;
mod pattern;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::fold_phrase;
use crate::time::Span;

pub use merge::merge_ontologies;
pub use pattern::{AttributePredicate, CompareOp, NotePattern, NoteShape, PatternValue};
pub use validate::{
    pattern_satisfiable_by, validate_ontology, Finding, FindingCheck, Severity, ValidationReport,
};

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("cannot read ontology {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed ontology document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("dangling reference: {0}")]
    Reference(String),
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("conflicting definitions: {0}")]
    Conflict(String),
}

pub type Result<T, E = OntologyError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Entity,
    Relationship,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Count,
    Quantity,
    Category,
    Text,
}

impl ValueKind {
    pub fn is_numeric(self) -> bool {
        matches!(self, ValueKind::Count | ValueKind::Quantity)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeDef {
    pub name: String,
    pub kind: ValueKind,
    /// Required for `quantity`, forbidden otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

/// An entity or relationship class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassDef {
    pub id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub attribute_schema: Vec<AttributeDef>,
    /// Marks the class whose in-text mentions can resolve a chunk's subject.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub person: bool,
}

impl ClassDef {
    pub fn attribute(&self, name: &str) -> Option<&AttributeDef> {
        self.attribute_schema.iter().find(|a| a.name == name)
    }

    /// The attribute a number written right before a mention fills in.
    pub fn first_numeric_attribute(&self) -> Option<&AttributeDef> {
        self.attribute_schema.iter().find(|a| a.kind.is_numeric())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionaryEntry {
    /// Stored folded: tokens lowercased and joined by single spaces.
    pub surface_form: String,
    pub canonical_id: String,
    pub kind: Kind,
    /// Fixed category/text attribute values a mention of this form carries.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trigger {
    pub entity: String,
    pub relationship: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Sum,
    Max,
    Mean,
    Count,
    /// Most frequent value; ties go to the smallest value.
    Mode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoteTemplate {
    pub template_id: String,
    pub trigger: Trigger,
    #[serde(default)]
    pub attribute_aggregations: BTreeMap<String, Aggregation>,
    #[serde(default = "one")]
    pub min_events: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionDef {
    pub index: u32,
    #[serde(default)]
    pub description: String,
    pub match_patterns: Vec<NotePattern>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptDef {
    pub concept_id: String,
    #[serde(default)]
    pub name: String,
    pub criteria: Vec<CriterionDef>,
    pub threshold: u32,
    #[serde(default = "one")]
    pub min_score_per_criterion: u32,
}

impl ConceptDef {
    pub fn criterion(&self, index: u32) -> Option<&CriterionDef> {
        self.criteria.iter().find(|c| c.index == index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinementRule {
    Max,
    Combine,
    Majority,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    MarkConflicted,
    FirstByTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSelector {
    pub entity: String,
    pub relationship: String,
    pub attribute: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementPolicy {
    pub field_selector: FieldSelector,
    pub rule: RefinementRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<Span>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tie_policy: Option<TiePolicy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionScope {
    #[default]
    SameSubjectOverlappingValidity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    ExpireOlder,
    FlagOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExclusionRule {
    /// Defaults to `<a>~<b>` over the ordered concept pair.
    #[serde(default)]
    pub id: String,
    pub concept_a: String,
    pub concept_b: String,
    #[serde(default)]
    pub scope: ExclusionScope,
    pub resolution: Resolution,
}

impl ExclusionRule {
    pub fn involves(&self, a: &str, b: &str) -> bool {
        (self.concept_a == a && self.concept_b == b) || (self.concept_a == b && self.concept_b == a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OntologySpec {
    pub id: String,
    pub version: String,
    #[serde(default)]
    pub entity_classes: Vec<ClassDef>,
    #[serde(default)]
    pub relationship_classes: Vec<ClassDef>,
    #[serde(default)]
    pub dictionary: Vec<DictionaryEntry>,
    #[serde(default)]
    pub note_templates: Vec<NoteTemplate>,
    #[serde(default)]
    pub concepts: Vec<ConceptDef>,
    #[serde(default)]
    pub refinement_policies: Vec<RefinementPolicy>,
    #[serde(default)]
    pub exclusion_rules: Vec<ExclusionRule>,
}

fn one() -> u32 {
    1
}

/// Parses, canonicalizes and checks an ontology document.
pub fn load_ontology(source: &str) -> Result<OntologySpec> {
    let raw: OntologySpec = serde_json::from_str(source)?;
    let spec = canonicalize(raw)?;
    check(&spec)?;
    Ok(spec)
}

pub fn load_ontology_file(path: &Path) -> Result<OntologySpec> {
    let text = std::fs::read_to_string(path).map_err(|source| OntologyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_ontology(&text)
}

/// Pretty JSON in the same schema [`load_ontology`] reads.
pub fn serialize_ontology(spec: &OntologySpec) -> String {
    serde_json::to_string_pretty(spec).expect("ontology serializes to JSON")
}

impl OntologySpec {
    pub fn classes(&self, kind: Kind) -> &[ClassDef] {
        match kind {
            Kind::Entity => &self.entity_classes,
            Kind::Relationship => &self.relationship_classes,
        }
    }

    pub fn class(&self, kind: Kind, id: &str) -> Option<&ClassDef> {
        self.classes(kind).iter().find(|c| c.id == id)
    }

    pub fn concept(&self, concept_id: &str) -> Option<&ConceptDef> {
        self.concepts.iter().find(|c| c.concept_id == concept_id)
    }

    pub fn template_for(&self, trigger: &Trigger) -> Option<&NoteTemplate> {
        self.note_templates.iter().find(|t| &t.trigger == trigger)
    }

    pub fn policy_for(&self, entity: &str, relationship: &str, attribute: &str) -> Option<&RefinementPolicy> {
        self.refinement_policies.iter().find(|p| {
            p.field_selector.entity == entity
                && p.field_selector.relationship == relationship
                && p.field_selector.attribute == attribute
        })
    }

    /// Exclusion rule between two concepts, in either order.
    pub fn exclusion_between(&self, a: &str, b: &str) -> Option<&ExclusionRule> {
        self.exclusion_rules.iter().find(|r| r.involves(a, b))
    }

    /// Schema of an attribute as seen from a (entity, relationship) action.
    pub fn action_attribute(&self, trigger: &Trigger, name: &str) -> Option<&AttributeDef> {
        self.class(Kind::Entity, &trigger.entity)
            .and_then(|c| c.attribute(name))
            .or_else(|| {
                self.class(Kind::Relationship, &trigger.relationship)
                    .and_then(|c| c.attribute(name))
            })
    }

    pub fn person_classes(&self) -> BTreeSet<&str> {
        self.entity_classes
            .iter()
            .filter(|c| c.person)
            .map(|c| c.id.as_str())
            .collect()
    }
}

fn canonicalize(mut spec: OntologySpec) -> Result<OntologySpec> {
    for entry in &mut spec.dictionary {
        entry.surface_form = fold_phrase(&entry.surface_form);
    }
    for policy in &mut spec.refinement_policies {
        if policy.rule == RefinementRule::Majority && policy.tie_policy.is_none() {
            policy.tie_policy = Some(TiePolicy::MarkConflicted);
        }
    }
    for rule in &mut spec.exclusion_rules {
        if rule.concept_a > rule.concept_b {
            std::mem::swap(&mut rule.concept_a, &mut rule.concept_b);
        }
        if rule.id.is_empty() {
            rule.id = format!("{}~{}", rule.concept_a, rule.concept_b);
        }
    }
    for concept in &mut spec.concepts {
        concept.criteria.sort_by_key(|c| c.index);
    }
    spec.entity_classes.sort_by(|a, b| a.id.cmp(&b.id));
    spec.relationship_classes.sort_by(|a, b| a.id.cmp(&b.id));
    spec.dictionary.sort_by(|a, b| {
        (a.kind, &a.surface_form, &a.canonical_id).cmp(&(b.kind, &b.surface_form, &b.canonical_id))
    });
    spec.dictionary.dedup();
    spec.note_templates.sort_by(|a, b| a.template_id.cmp(&b.template_id));
    spec.concepts.sort_by(|a, b| a.concept_id.cmp(&b.concept_id));
    spec.refinement_policies
        .sort_by(|a, b| a.field_selector.cmp(&b.field_selector));
    spec.refinement_policies.dedup();
    spec.exclusion_rules
        .sort_by(|a, b| (&a.concept_a, &a.concept_b, &a.id).cmp(&(&b.concept_a, &b.concept_b, &b.id)));
    spec.exclusion_rules.dedup();
    Ok(spec)
}

fn constraint(msg: impl Into<String>) -> OntologyError {
    OntologyError::Constraint(msg.into())
}

fn reference(msg: impl Into<String>) -> OntologyError {
    OntologyError::Reference(msg.into())
}

fn check_id(what: &str, id: &str) -> Result<()> {
    if id.is_empty() {
        return Err(constraint(format!("{what} id is empty")));
    }
    if !id.is_ascii() {
        return Err(constraint(format!("{what} id `{id}` is not ASCII")));
    }
    Ok(())
}

fn check_unique<'a>(what: &str, ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut seen = BTreeSet::new();
    for id in ids {
        check_id(what, id)?;
        if !seen.insert(id) {
            return Err(constraint(format!("duplicate {what} id `{id}`")));
        }
    }
    Ok(())
}

fn check_classes(kind: &str, classes: &[ClassDef]) -> Result<()> {
    check_unique(kind, classes.iter().map(|c| c.id.as_str()))?;
    for class in classes {
        let mut names = BTreeSet::new();
        for attr in &class.attribute_schema {
            if attr.name.is_empty() {
                return Err(constraint(format!("{kind} `{}` has an unnamed attribute", class.id)));
            }
            if !names.insert(attr.name.as_str()) {
                return Err(constraint(format!(
                    "{kind} `{}` declares attribute `{}` twice",
                    class.id, attr.name
                )));
            }
            match (attr.kind, &attr.unit) {
                (ValueKind::Quantity, None) => {
                    return Err(constraint(format!(
                        "quantity attribute `{}.{}` needs a unit",
                        class.id, attr.name
                    )))
                }
                (ValueKind::Count | ValueKind::Category | ValueKind::Text, Some(_)) => {
                    return Err(constraint(format!(
                        "only quantity attributes carry a unit (`{}.{}`)",
                        class.id, attr.name
                    )))
                }
                _ => {}
            }
        }
    }
    Ok(())
}

fn check_pattern(spec: &OntologySpec, owner: &str, pattern: &NotePattern) -> Result<()> {
    if let Some(e) = &pattern.entity {
        if spec.class(Kind::Entity, e).is_none() {
            return Err(reference(format!("{owner} pattern names unknown entity class `{e}`")));
        }
    }
    if let Some(r) = &pattern.relationship {
        if spec.class(Kind::Relationship, r).is_none() {
            return Err(reference(format!(
                "{owner} pattern names unknown relationship class `{r}`"
            )));
        }
    }
    for pred in &pattern.attributes {
        if !pred.is_well_formed() {
            return Err(constraint(format!(
                "{owner} predicate on `{}` pairs operator {:?} with an incompatible value",
                pred.name, pred.op
            )));
        }
        let scoped: Vec<&ClassDef> = match (&pattern.entity, &pattern.relationship) {
            (None, None) => spec
                .entity_classes
                .iter()
                .chain(&spec.relationship_classes)
                .collect(),
            (e, r) => {
                // An open side can pair with any class of that kind.
                let entities: Vec<&ClassDef> = match e {
                    Some(e) => spec.class(Kind::Entity, e).into_iter().collect(),
                    None => spec.entity_classes.iter().collect(),
                };
                let relationships: Vec<&ClassDef> = match r {
                    Some(r) => spec.class(Kind::Relationship, r).into_iter().collect(),
                    None => spec.relationship_classes.iter().collect(),
                };
                entities.into_iter().chain(relationships).collect()
            }
        };
        if !scoped.iter().any(|c| c.attribute(&pred.name).is_some()) {
            return Err(reference(format!(
                "{owner} predicate names unknown attribute `{}`",
                pred.name
            )));
        }
    }
    Ok(())
}

fn check(spec: &OntologySpec) -> Result<()> {
    check_id("ontology", &spec.id)?;
    if spec.version.is_empty() {
        return Err(constraint("ontology version is empty"));
    }
    check_classes("entity class", &spec.entity_classes)?;
    check_classes("relationship class", &spec.relationship_classes)?;

    let mut surfaces = BTreeSet::new();
    for entry in &spec.dictionary {
        if entry.surface_form.is_empty() {
            return Err(constraint(format!(
                "dictionary entry for `{}` has an empty surface form",
                entry.canonical_id
            )));
        }
        let class = spec.class(entry.kind, &entry.canonical_id).ok_or_else(|| {
            reference(format!(
                "dictionary entry `{}` references unknown {:?} class `{}`",
                entry.surface_form, entry.kind, entry.canonical_id
            ))
        })?;
        if !surfaces.insert((entry.surface_form.as_str(), entry.kind)) {
            return Err(constraint(format!(
                "surface form `{}` is mapped twice as {:?}",
                entry.surface_form, entry.kind
            )));
        }
        for name in entry.attributes.keys() {
            match class.attribute(name) {
                Some(attr) if !attr.kind.is_numeric() => {}
                Some(_) => {
                    return Err(constraint(format!(
                        "dictionary entry `{}` fixes numeric attribute `{name}`",
                        entry.surface_form
                    )))
                }
                None => {
                    return Err(reference(format!(
                        "dictionary entry `{}` sets unknown attribute `{name}`",
                        entry.surface_form
                    )))
                }
            }
        }
    }

    check_unique(
        "note template",
        spec.note_templates.iter().map(|t| t.template_id.as_str()),
    )?;
    let mut triggers = BTreeSet::new();
    for template in &spec.note_templates {
        let t = &template.trigger;
        if spec.class(Kind::Entity, &t.entity).is_none() {
            return Err(reference(format!(
                "template `{}` triggers on unknown entity class `{}`",
                template.template_id, t.entity
            )));
        }
        if spec.class(Kind::Relationship, &t.relationship).is_none() {
            return Err(reference(format!(
                "template `{}` triggers on unknown relationship class `{}`",
                template.template_id, t.relationship
            )));
        }
        if !triggers.insert(t) {
            return Err(constraint(format!(
                "more than one template triggers on ({}, {})",
                t.entity, t.relationship
            )));
        }
        if template.min_events < 1 {
            return Err(constraint(format!(
                "template `{}` has min_events < 1",
                template.template_id
            )));
        }
        for (name, agg) in &template.attribute_aggregations {
            let attr = spec.action_attribute(t, name).ok_or_else(|| {
                reference(format!(
                    "template `{}` aggregates unknown attribute `{name}`",
                    template.template_id
                ))
            })?;
            let numeric_agg = matches!(agg, Aggregation::Sum | Aggregation::Max | Aggregation::Mean);
            if numeric_agg && !attr.kind.is_numeric() {
                return Err(constraint(format!(
                    "template `{}` applies {agg:?} to non-numeric attribute `{name}`",
                    template.template_id
                )));
            }
        }
    }

    check_unique("concept", spec.concepts.iter().map(|c| c.concept_id.as_str()))?;
    for concept in &spec.concepts {
        let n = concept.criteria.len() as u32;
        if n == 0 {
            return Err(constraint(format!("concept `{}` has no criteria", concept.concept_id)));
        }
        for (pos, criterion) in concept.criteria.iter().enumerate() {
            if criterion.index != pos as u32 + 1 {
                return Err(constraint(format!(
                    "concept `{}` criterion indices must run 1..={n} without gaps or repeats",
                    concept.concept_id
                )));
            }
            if criterion.match_patterns.is_empty() {
                return Err(constraint(format!(
                    "criterion {}-{} has no match patterns",
                    concept.concept_id, criterion.index
                )));
            }
            let owner = format!("criterion {}-{}", concept.concept_id, criterion.index);
            for pattern in &criterion.match_patterns {
                check_pattern(spec, &owner, pattern)?;
            }
        }
        if concept.threshold < 1 || concept.threshold > n {
            return Err(constraint(format!(
                "concept `{}` threshold {} outside 1..={n}",
                concept.concept_id, concept.threshold
            )));
        }
        if concept.min_score_per_criterion < 1 {
            return Err(constraint(format!(
                "concept `{}` min_score_per_criterion must be at least 1",
                concept.concept_id
            )));
        }
    }

    let mut selectors = BTreeSet::new();
    for policy in &spec.refinement_policies {
        let sel = &policy.field_selector;
        let trigger = Trigger {
            entity: sel.entity.clone(),
            relationship: sel.relationship.clone(),
        };
        if spec.class(Kind::Entity, &sel.entity).is_none()
            || spec.class(Kind::Relationship, &sel.relationship).is_none()
        {
            return Err(reference(format!(
                "refinement policy names unknown classes ({}, {})",
                sel.entity, sel.relationship
            )));
        }
        let attr = spec.action_attribute(&trigger, &sel.attribute).ok_or_else(|| {
            reference(format!(
                "refinement policy names unknown attribute `{}` of ({}, {})",
                sel.attribute, sel.entity, sel.relationship
            ))
        })?;
        if !selectors.insert(sel) {
            return Err(constraint(format!(
                "more than one refinement rule for ({}, {}, {})",
                sel.entity, sel.relationship, sel.attribute
            )));
        }
        match policy.rule {
            RefinementRule::Combine if policy.period.is_none_or(|p| p.is_zero()) => {
                return Err(constraint(format!(
                    "combine policy on `{}` needs a positive period",
                    sel.attribute
                )))
            }
            RefinementRule::Max | RefinementRule::Majority if policy.period.is_some() => {
                return Err(constraint(format!(
                    "only combine policies take a period (`{}`)",
                    sel.attribute
                )))
            }
            _ => {}
        }
        if policy.rule != RefinementRule::Majority && policy.tie_policy.is_some() {
            return Err(constraint(format!(
                "only majority policies take a tie policy (`{}`)",
                sel.attribute
            )));
        }
        let numeric_rule = matches!(policy.rule, RefinementRule::Max | RefinementRule::Combine);
        if numeric_rule != attr.kind.is_numeric() {
            return Err(constraint(format!(
                "{:?} cannot reconcile {:?} attribute `{}`",
                policy.rule, attr.kind, sel.attribute
            )));
        }
    }

    let mut pairs = BTreeSet::new();
    for rule in &spec.exclusion_rules {
        for concept in [&rule.concept_a, &rule.concept_b] {
            if spec.concept(concept).is_none() {
                return Err(reference(format!(
                    "exclusion rule `{}` names unknown concept `{concept}`",
                    rule.id
                )));
            }
        }
        if rule.concept_a == rule.concept_b {
            return Err(constraint(format!(
                "exclusion rule `{}` pairs concept `{}` with itself",
                rule.id, rule.concept_a
            )));
        }
        if !pairs.insert((&rule.concept_a, &rule.concept_b)) {
            return Err(OntologyError::Conflict(format!(
                "concepts `{}` and `{}` carry more than one exclusion rule",
                rule.concept_a, rule.concept_b
            )));
        }
    }
    check_unique(
        "exclusion rule",
        spec.exclusion_rules.iter().map(|r| r.id.as_str()),
    )?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// A small but complete spec used across module tests.
    pub(crate) const DRINKING: &str = r#"{
      "id": "drinking", "version": "1",
      "entity_classes": [
        {"id": "person", "description": "a drinker", "person": true},
        {"id": "beer", "description": "beer",
         "attribute_schema": [{"name": "amount", "kind": "quantity", "unit": "drink"}]},
        {"id": "liquor", "description": "spirits",
         "attribute_schema": [{"name": "amount", "kind": "quantity", "unit": "drink"},
                              {"name": "brand", "kind": "category"}]}
      ],
      "relationship_classes": [
        {"id": "consume", "description": "drinking"},
        {"id": "purchase", "description": "buying"}
      ],
      "dictionary": [
        {"surface_form": "A", "canonical_id": "person", "kind": "entity"},
        {"surface_form": "beer", "canonical_id": "beer", "kind": "entity"},
        {"surface_form": "beers", "canonical_id": "beer", "kind": "entity"},
        {"surface_form": "vodka", "canonical_id": "liquor", "kind": "entity",
         "attributes": {"brand": "vodka"}},
        {"surface_form": "drank", "canonical_id": "consume", "kind": "relationship"},
        {"surface_form": "booze up", "canonical_id": "consume", "kind": "relationship"},
        {"surface_form": "bottom up", "canonical_id": "consume", "kind": "relationship"},
        {"surface_form": "bought", "canonical_id": "purchase", "kind": "relationship"}
      ],
      "note_templates": [
        {"template_id": "beer-consume", "trigger": {"entity": "beer", "relationship": "consume"},
         "attribute_aggregations": {"amount": "sum"}, "min_events": 1},
        {"template_id": "liquor-consume", "trigger": {"entity": "liquor", "relationship": "consume"},
         "attribute_aggregations": {"amount": "sum", "brand": "mode"}}
      ],
      "concepts": [
        {"concept_id": "heavy", "name": "heavy drinking", "threshold": 1,
         "criteria": [
           {"index": 1, "description": "frequent beer",
            "match_patterns": [{"entity": "beer", "relationship": "consume",
                                "intensity_at_least": "frequent"}]},
           {"index": 2, "description": "large amounts",
            "match_patterns": [{"relationship": "consume",
                                "attributes": [{"name": "amount", "op": "ge", "value": 20}]}]}
         ]},
        {"concept_id": "sober", "name": "abstinent", "threshold": 1,
         "criteria": [
           {"index": 1, "description": "rare drinking",
            "match_patterns": [{"relationship": "consume", "intensity_at_most": "rare"}]}
         ]}
      ],
      "refinement_policies": [
        {"field_selector": {"entity": "beer", "relationship": "consume", "attribute": "amount"},
         "rule": "max"},
        {"field_selector": {"entity": "liquor", "relationship": "consume", "attribute": "brand"},
         "rule": "majority"},
        {"field_selector": {"entity": "liquor", "relationship": "consume", "attribute": "amount"},
         "rule": "combine", "period": "1m"}
      ],
      "exclusion_rules": [
        {"concept_a": "sober", "concept_b": "heavy", "resolution": "expire_older"}
      ]
    }"#;

    pub(crate) fn drinking() -> OntologySpec {
        load_ontology(DRINKING).expect("fixture loads")
    }

    fn edit(f: impl FnOnce(&mut serde_json::Value)) -> String {
        let mut v: serde_json::Value = serde_json::from_str(DRINKING).unwrap();
        f(&mut v);
        v.to_string()
    }

    #[test]
    fn loads_and_canonicalizes() {
        let spec = drinking();
        assert_eq!(spec.entity_classes.len(), 3);
        let rule = &spec.exclusion_rules[0];
        assert_eq!((rule.concept_a.as_str(), rule.concept_b.as_str()), ("heavy", "sober"));
        assert_eq!(rule.id, "heavy~sober");
        assert!(spec.exclusion_between("sober", "heavy").is_some());
        assert!(spec.dictionary.iter().any(|e| e.surface_form == "a"));
        let majority = spec.policy_for("liquor", "consume", "brand").unwrap();
        assert_eq!(majority.tie_policy, Some(TiePolicy::MarkConflicted));
    }

    #[test]
    fn round_trip_is_identity() {
        let spec = drinking();
        let again = load_ontology(&serialize_ontology(&spec)).unwrap();
        assert_eq!(again, spec);
    }

    #[test]
    fn malformed_document_is_a_parse_error() {
        assert!(matches!(load_ontology("{"), Err(OntologyError::Parse(_))));
        let unknown_key = edit(|v| v["colour"] = "red".into());
        assert!(matches!(load_ontology(&unknown_key), Err(OntologyError::Parse(_))));
    }

    #[test]
    fn threshold_above_criteria_count() {
        let doc = edit(|v| v["concepts"][1]["threshold"] = 2.into());
        assert!(matches!(load_ontology(&doc), Err(OntologyError::Constraint(_))));
        let doc = edit(|v| v["concepts"][1]["threshold"] = 0.into());
        assert!(matches!(load_ontology(&doc), Err(OntologyError::Constraint(_))));
    }

    #[test]
    fn dangling_dictionary_class() {
        let doc = edit(|v| {
            v["dictionary"][3]["canonical_id"] = "liqour".into();
        });
        let err = load_ontology(&doc).unwrap_err();
        assert!(matches!(err, OntologyError::Reference(ref m) if m.contains("liqour")), "{err}");
    }

    #[test]
    fn duplicate_surface_kind_rejected() {
        let doc = edit(|v| {
            v["dictionary"]
                .as_array_mut()
                .unwrap()
                .push(serde_json::json!({"surface_form": "Beer", "canonical_id": "liquor", "kind": "entity"}));
        });
        assert!(matches!(load_ontology(&doc), Err(OntologyError::Constraint(_))));
    }

    #[test]
    fn criterion_indices_must_be_contiguous() {
        let doc = edit(|v| v["concepts"][0]["criteria"][1]["index"] = 3.into());
        assert!(matches!(load_ontology(&doc), Err(OntologyError::Constraint(_))));
    }

    #[test]
    fn duplicate_concept_ids() {
        let doc = edit(|v| v["concepts"][1]["concept_id"] = "heavy".into());
        assert!(matches!(load_ontology(&doc), Err(OntologyError::Constraint(_))));
    }

    #[test]
    fn combine_requires_period_and_numeric_attribute() {
        let doc = edit(|v| {
            v["refinement_policies"][2]
                .as_object_mut()
                .unwrap()
                .remove("period");
        });
        assert!(matches!(load_ontology(&doc), Err(OntologyError::Constraint(_))));
        let doc = edit(|v| v["refinement_policies"][1]["rule"] = "max".into());
        assert!(matches!(load_ontology(&doc), Err(OntologyError::Constraint(_))));
    }

    #[test]
    fn exclusion_rules_reject_self_pairs_and_unknown_concepts() {
        let doc = edit(|v| v["exclusion_rules"][0]["concept_b"] = "sober".into());
        assert!(matches!(load_ontology(&doc), Err(OntologyError::Constraint(_))));
        let doc = edit(|v| v["exclusion_rules"][0]["concept_b"] = "nope".into());
        assert!(matches!(load_ontology(&doc), Err(OntologyError::Reference(_))));
    }

    #[test]
    fn symmetric_duplicate_exclusions_collapse() {
        let doc = edit(|v| {
            v["exclusion_rules"].as_array_mut().unwrap().push(serde_json::json!(
                {"concept_a": "heavy", "concept_b": "sober", "resolution": "expire_older"}
            ));
        });
        assert_eq!(load_ontology(&doc).unwrap().exclusion_rules.len(), 1);
        let doc = edit(|v| {
            v["exclusion_rules"].as_array_mut().unwrap().push(serde_json::json!(
                {"concept_a": "heavy", "concept_b": "sober", "resolution": "flag_only"}
            ));
        });
        assert!(matches!(load_ontology(&doc), Err(OntologyError::Conflict(_))));
    }

    #[test]
    fn non_ascii_ids_rejected() {
        let doc = edit(|v| v["concepts"][1]["concept_id"] = "sobér".into());
        assert!(matches!(load_ontology(&doc), Err(OntologyError::Constraint(_))));
    }
}
