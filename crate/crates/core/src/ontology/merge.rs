use std::collections::BTreeMap;

use super::{canonicalize, check, OntologyError, OntologySpec, Result};

fn union_by<T, K, F>(what: &str, a: &[T], b: &[T], key: F) -> Result<Vec<T>>
where
    T: Clone + PartialEq,
    K: Ord + std::fmt::Debug,
    F: Fn(&T) -> K,
{
    let mut out: BTreeMap<K, T> = BTreeMap::new();
    for item in a.iter().chain(b) {
        let k = key(item);
        match out.get(&k) {
            Some(existing) if existing != item => {
                return Err(OntologyError::Conflict(format!(
                    "{what} {k:?} is defined differently in the two ontologies"
                )))
            }
            Some(_) => {}
            None => {
                out.insert(k, item.clone());
            }
        }
    }
    Ok(out.into_values().collect())
}

fn join_label(a: &str, b: &str) -> String {
    match a.cmp(b) {
        std::cmp::Ordering::Equal => a.to_string(),
        std::cmp::Ordering::Less => format!("{a}+{b}"),
        std::cmp::Ordering::Greater => format!("{b}+{a}"),
    }
}

/// Union of two specs by id. Identical definitions collapse; the same id with
/// a different definition is a conflict. The result is checked like a freshly
/// loaded spec, and the operation is commutative and idempotent.
pub fn merge_ontologies(a: &OntologySpec, b: &OntologySpec) -> Result<OntologySpec> {
    let merged = OntologySpec {
        id: join_label(&a.id, &b.id),
        version: join_label(&a.version, &b.version),
        entity_classes: union_by("entity class", &a.entity_classes, &b.entity_classes, |c| c.id.clone())?,
        relationship_classes: union_by(
            "relationship class",
            &a.relationship_classes,
            &b.relationship_classes,
            |c| c.id.clone(),
        )?,
        dictionary: union_by("dictionary entry", &a.dictionary, &b.dictionary, |e| {
            (e.kind, e.surface_form.clone())
        })?,
        note_templates: union_by("note template", &a.note_templates, &b.note_templates, |t| {
            t.template_id.clone()
        })?,
        concepts: union_by("concept", &a.concepts, &b.concepts, |c| c.concept_id.clone())?,
        refinement_policies: union_by(
            "refinement policy",
            &a.refinement_policies,
            &b.refinement_policies,
            |p| p.field_selector.clone(),
        )?,
        exclusion_rules: union_by("exclusion rule", &a.exclusion_rules, &b.exclusion_rules, |r| {
            (r.concept_a.clone(), r.concept_b.clone())
        })?,
    };
    let merged = canonicalize(merged)?;
    check(&merged)?;
    Ok(merged)
}
