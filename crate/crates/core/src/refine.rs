//! Note validation and reconciliation.
//!
//! Notes about the same (subject, action) are reconciled per attribute by the
//! ontology's refinement policies. Max and majority apply inside one window;
//! combine then sums across windows of its period. Every output records which
//! input notes fed it and which rule produced each value.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::content_id;
use crate::notes::{Note, SCHEMA_VERSION};
use crate::ontology::{OntologySpec, RefinementRule, TiePolicy, Trigger};
use crate::time::{bucket_of, Instant, Span, TimeRange};
use crate::values::{Amount, AttrValue};

#[derive(Debug, Error, PartialEq)]
pub enum RefineError {
    #[error("rule applied to no values")]
    Empty,
    #[error("cannot compare amounts in `{0}` and `{1}`")]
    MixedUnits(String, String),
    #[error("attribute `{0}` is missing or not numeric on note {1}")]
    NotNumeric(String, String),
    #[error("notes {0} and {1} overlap in time; reconcile them by max or majority first")]
    Overlap(String, String),
    #[error("note {0} has no time range")]
    Undated(String),
    #[error("notes span {0}s, more than the target period of {1}")]
    ExceedsPeriod(i64, Span),
    #[error("notes {0} and {1} differ in subject or action")]
    Mismatch(String, String),
    #[error("no refinement policy for {entity}/{relationship} attribute `{attribute}`, whose values conflict")]
    MissingPolicy {
        entity: String,
        relationship: String,
        attribute: String,
    },
}

fn unit_name(unit: &Option<String>) -> String {
    unit.clone().unwrap_or_else(|| "count".into())
}

/// Largest amount; all amounts must share a unit.
pub fn apply_max_rule(values: &[Amount]) -> Result<Amount, RefineError> {
    let first = values.first().ok_or(RefineError::Empty)?;
    let mut best = first;
    for v in &values[1..] {
        if v.unit != first.unit {
            return Err(RefineError::MixedUnits(unit_name(&first.unit), unit_name(&v.unit)));
        }
        if v.value > best.value {
            best = v;
        }
    }
    Ok(best.clone())
}

/// Mode of categorical values. Each value carries the time of the note that
/// supports it (`None` sorts after every instant).
pub fn apply_majority_rule(values: &[(AttrValue, Option<Instant>)], tie: TiePolicy) -> Result<AttrValue, RefineError> {
    if values.is_empty() {
        return Err(RefineError::Empty);
    }
    let mut tally: BTreeMap<String, (usize, Option<Instant>, &AttrValue)> = BTreeMap::new();
    for (value, time) in values {
        let slot = tally.entry(value.group_key()).or_insert((0, *time, value));
        slot.0 += 1;
        slot.1 = earliest(slot.1, *time);
    }
    let best = tally.values().map(|(n, _, _)| *n).max().unwrap_or(0);
    let tied: Vec<_> = tally.values().filter(|(n, _, _)| *n == best).collect();
    if tied.len() == 1 {
        return Ok(tied[0].2.clone());
    }
    match tie {
        TiePolicy::MarkConflicted => Ok(AttrValue::Conflicted),
        // `tied` is in key order, so `min_by_key` keeps the smallest key on
        // equal times.
        TiePolicy::FirstByTime => Ok(tied
            .iter()
            .min_by_key(|(_, t, _)| (t.is_none(), *t))
            .map(|(_, _, v)| (*v).clone())
            .expect("at least two tied values")),
    }
}

fn earliest(a: Option<Instant>, b: Option<Instant>) -> Option<Instant> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombineOutcome {
    pub total: Amount,
    /// Uncovered stretches between consecutive notes.
    pub gaps: Vec<TimeRange>,
}

/// Sums an attribute over notes with pairwise disjoint time ranges whose
/// overall span fits in `period`.
pub fn apply_combine_rule(notes: &[&Note], attribute: &str, period: Span) -> Result<CombineOutcome, RefineError> {
    let first = notes.first().ok_or(RefineError::Empty)?;
    let mut dated: Vec<(&Note, TimeRange, &Amount)> = Vec::with_capacity(notes.len());
    for note in notes {
        if note.subject != first.subject || note.action != first.action {
            return Err(RefineError::Mismatch(first.note_id.clone(), note.note_id.clone()));
        }
        let range = note.time_range.ok_or_else(|| RefineError::Undated(note.note_id.clone()))?;
        let amount = match note.attributes.get(attribute) {
            Some(AttrValue::Amount(a)) => a,
            _ => return Err(RefineError::NotNumeric(attribute.into(), note.note_id.clone())),
        };
        dated.push((note, range, amount));
    }
    dated.sort_by_key(|(n, r, _)| (*r, n.note_id.clone()));
    let unit = &dated[0].2.unit;
    let mut gaps = Vec::new();
    for pair in dated.windows(2) {
        let ((a, ra, _), (b, rb, _)) = (&pair[0], &pair[1]);
        if ra.overlaps(rb) {
            return Err(RefineError::Overlap(a.note_id.clone(), b.note_id.clone()));
        }
        if ra.end < rb.start {
            gaps.push(TimeRange::new(ra.end, rb.start));
        }
    }
    for (_, _, amount) in &dated {
        if &amount.unit != unit {
            return Err(RefineError::MixedUnits(unit_name(unit), unit_name(&amount.unit)));
        }
    }
    let span = dated.last().expect("nonempty").1.end - dated[0].1.start;
    if span.num_seconds() > period.seconds() {
        return Err(RefineError::ExceedsPeriod(span.num_seconds(), period));
    }
    Ok(CombineOutcome {
        total: Amount {
            value: dated.iter().map(|(_, _, a)| a.value).sum(),
            unit: unit.clone(),
        },
        gaps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppliedRuleKind {
    Max,
    Combine,
    Majority,
    /// Several notes agreed on a value, or were folded into one record.
    Merge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedRule {
    pub rule: AppliedRuleKind,
    /// Original note ids feeding this step.
    pub inputs: Vec<String>,
    pub field: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input_values: Vec<AttrValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<AttrValue>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gaps: Vec<TimeRange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedNote {
    pub refined_id: String,
    #[serde(flatten)]
    pub note: Note,
    /// Note DB ids this record was built from.
    pub sources: Vec<String>,
    #[serde(default)]
    pub applied_rules: Vec<AppliedRule>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub passthrough: bool,
}

impl RefinedNote {
    fn seal(mut self) -> Self {
        self.refined_id = String::new();
        self.refined_id = content_id("refined", &self);
        self
    }

    fn passthrough(note: &Note) -> Self {
        RefinedNote {
            refined_id: String::new(),
            note: note.clone(),
            sources: vec![note.note_id.clone()],
            applied_rules: Vec::new(),
            passthrough: true,
        }
        .seal()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum Rejection {
    UnknownVersion(u32),
    DanglingProvenance(String),
    EmptyProvenance,
    Duplicate,
    /// `note_id` does not match the note's content.
    Tampered,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accepted,
    Rejected(Rejection),
}

/// Format and novelty gate in front of refinement.
#[derive(Debug, Clone, Default)]
pub struct NoteValidator {
    seen: BTreeSet<String>,
}

impl NoteValidator {
    pub fn with_seen(seen: impl IntoIterator<Item = String>) -> Self {
        NoteValidator {
            seen: seen.into_iter().collect(),
        }
    }

    pub fn validate_note(&mut self, note: &Note, chunk_exists: impl Fn(&str) -> bool) -> Verdict {
        if note.schema_version != SCHEMA_VERSION {
            return Verdict::Rejected(Rejection::UnknownVersion(note.schema_version));
        }
        if note.provenance.is_empty() {
            return Verdict::Rejected(Rejection::EmptyProvenance);
        }
        if let Some(missing) = note.provenance.iter().find(|c| !chunk_exists(c)) {
            return Verdict::Rejected(Rejection::DanglingProvenance(missing.clone()));
        }
        if note.clone().seal().note_id != note.note_id {
            return Verdict::Rejected(Rejection::Tampered);
        }
        if !self.seen.insert(note.note_id.clone()) {
            return Verdict::Rejected(Rejection::Duplicate);
        }
        Verdict::Accepted
    }
}

/// Working record while folding notes together.
#[derive(Debug, Clone)]
struct Draft {
    note: Note,
    sources: Vec<String>,
    rules: Vec<AppliedRule>,
}

impl Draft {
    fn from_note(note: &Note) -> Self {
        Draft {
            note: note.clone(),
            sources: vec![note.note_id.clone()],
            rules: Vec::new(),
        }
    }

    fn finish(self, passthrough_source: Option<&Note>) -> RefinedNote {
        match passthrough_source {
            Some(original) if self.rules.is_empty() => RefinedNote::passthrough(original),
            _ => RefinedNote {
                refined_id: String::new(),
                note: self.note.seal(),
                sources: self.sources,
                applied_rules: self.rules,
                passthrough: false,
            }
            .seal(),
        }
    }
}

fn missing_policy(action: &Trigger, attribute: &str) -> RefineError {
    RefineError::MissingPolicy {
        entity: action.entity.clone(),
        relationship: action.relationship.clone(),
        attribute: attribute.to_string(),
    }
}

fn amounts_of(values: &[(&Draft, &AttrValue)], attribute: &str) -> Result<Vec<Amount>, RefineError> {
    values
        .iter()
        .map(|(d, v)| match v {
            AttrValue::Amount(a) => Ok(a.clone()),
            _ => Err(RefineError::NotNumeric(attribute.into(), d.note.note_id.clone())),
        })
        .collect()
}

/// Folds drafts sharing (subject, action) into one. `combine_period` selects
/// the cross-window pass, where combine-policy attributes are summed.
fn fold(drafts: Vec<Draft>, spec: &OntologySpec, combine_period: Option<Span>) -> Result<Draft, RefineError> {
    let action = drafts[0].note.action.clone();
    let sources: Vec<String> = {
        let mut s: Vec<String> = drafts.iter().flat_map(|d| d.sources.iter().cloned()).collect();
        s.sort();
        s
    };
    let mut rules: Vec<AppliedRule> = drafts.iter().flat_map(|d| d.rules.iter().cloned()).collect();
    rules.push(AppliedRule {
        rule: AppliedRuleKind::Merge,
        inputs: sources.clone(),
        field: "note".into(),
        input_values: Vec::new(),
        output: None,
        gaps: Vec::new(),
    });

    let names: BTreeSet<String> = drafts.iter().flat_map(|d| d.note.attributes.keys().cloned()).collect();
    let mut attributes = BTreeMap::new();
    for name in names {
        let values: Vec<(&Draft, &AttrValue)> = drafts
            .iter()
            .filter_map(|d| d.note.attributes.get(&name).map(|v| (d, v)))
            .collect();
        let inputs: Vec<String> = {
            let mut s: Vec<String> = values.iter().flat_map(|(d, _)| d.sources.iter().cloned()).collect();
            s.sort();
            s
        };
        let input_values: Vec<AttrValue> = values.iter().map(|(_, v)| (*v).clone()).collect();
        let policy = spec.policy_for(&action.entity, &action.relationship, &name);
        let keys: BTreeSet<String> = values.iter().map(|(_, v)| v.group_key()).collect();
        let (rule, output, gaps) = match policy.map(|p| p.rule) {
            Some(RefinementRule::Combine) if combine_period.is_some() && values.len() > 1 => {
                let notes: Vec<&Note> = values.iter().map(|(d, _)| &d.note).collect();
                let out = apply_combine_rule(&notes, &name, combine_period.expect("checked"))?;
                (AppliedRuleKind::Combine, AttrValue::Amount(out.total), out.gaps)
            }
            _ if keys.len() == 1 => (AppliedRuleKind::Merge, values[0].1.clone(), Vec::new()),
            Some(RefinementRule::Max | RefinementRule::Combine) => {
                let out = apply_max_rule(&amounts_of(&values, &name)?)?;
                (AppliedRuleKind::Max, AttrValue::Amount(out), Vec::new())
            }
            Some(RefinementRule::Majority) => {
                let tie = policy.and_then(|p| p.tie_policy).unwrap_or(TiePolicy::MarkConflicted);
                let timed: Vec<(AttrValue, Option<Instant>)> = values
                    .iter()
                    .map(|(d, v)| ((*v).clone(), d.note.time_range.map(|r| r.start)))
                    .collect();
                (AppliedRuleKind::Majority, apply_majority_rule(&timed, tie)?, Vec::new())
            }
            None => return Err(missing_policy(&action, &name)),
        };
        rules.push(AppliedRule {
            rule,
            inputs,
            field: name.clone(),
            input_values,
            output: Some(output.clone()),
            gaps,
        });
        attributes.insert(name, output);
    }

    let base = &drafts[0].note;
    let mut provenance: Vec<String> = drafts.iter().flat_map(|d| d.note.provenance.iter().cloned()).collect();
    provenance.sort();
    provenance.dedup();
    let places: BTreeSet<&Option<String>> = drafts.iter().map(|d| &d.note.place).collect();
    let time_range = drafts
        .iter()
        .filter_map(|d| d.note.time_range)
        .reduce(|a, b| a.hull(&b));
    let event_count = if combine_period.is_some() {
        drafts.iter().map(|d| d.note.event_count).sum()
    } else {
        drafts.iter().map(|d| d.note.event_count).max().unwrap_or(0)
    };
    let note = Note {
        note_id: String::new(),
        subject: base.subject.clone(),
        action,
        attributes,
        intensity: drafts.iter().map(|d| d.note.intensity).max().expect("nonempty"),
        confidence: drafts.iter().map(|d| d.note.confidence).max().expect("nonempty"),
        time_range,
        place: if places.len() == 1 { base.place.clone() } else { None },
        provenance,
        template_id: base.template_id.clone(),
        event_count,
        late: false,
        schema_version: SCHEMA_VERSION,
    }
    .seal();
    Ok(Draft { note, sources, rules })
}

fn combine_period(spec: &OntologySpec, action: &Trigger) -> Option<Span> {
    spec.refinement_policies
        .iter()
        .filter(|p| {
            p.rule == RefinementRule::Combine
                && p.field_selector.entity == action.entity
                && p.field_selector.relationship == action.relationship
        })
        .filter_map(|p| p.period)
        .min_by_key(|p| p.seconds())
}

/// Reconciles a batch of validated notes. Output order is canonical, so any
/// permutation of the batch gives the same result.
pub fn refine_notes(batch: &[Note], spec: &OntologySpec) -> Result<Vec<RefinedNote>, RefineError> {
    let mut sorted: Vec<&Note> = batch.iter().collect();
    sorted.sort_by(|a, b| a.note_id.cmp(&b.note_id));

    // Pass 1: one record per (subject, action, time range).
    type WindowKey = (String, Trigger, Option<TimeRange>);
    let mut windows: BTreeMap<WindowKey, Vec<&Note>> = BTreeMap::new();
    for note in sorted {
        windows
            .entry((note.subject.clone(), note.action.clone(), note.time_range))
            .or_default()
            .push(note);
    }
    let mut per_window: Vec<(Draft, Option<&Note>)> = Vec::new();
    for notes in windows.into_values() {
        if notes.len() == 1 {
            per_window.push((Draft::from_note(notes[0]), Some(notes[0])));
        } else {
            let drafts = notes.iter().map(|n| Draft::from_note(n)).collect();
            per_window.push((fold(drafts, spec, None)?, None));
        }
    }

    // Pass 2: combine across windows in the same period bucket.
    type PeriodKey = (String, Trigger, Option<TimeRange>);
    let mut periods: BTreeMap<PeriodKey, Vec<(Draft, Option<&Note>)>> = BTreeMap::new();
    let mut out = Vec::new();
    for (draft, original) in per_window {
        let period = combine_period(spec, &draft.note.action);
        match (period, draft.note.time_range) {
            // A record straddling two period buckets is left on its own.
            (Some(p), Some(range)) if bucket_of(range.start, p).covers(&range) => {
                let key = (draft.note.subject.clone(), draft.note.action.clone(), Some(bucket_of(range.start, p)));
                periods.entry(key).or_default().push((draft, original));
            }
            _ => out.push(draft.finish(original)),
        }
    }
    for ((_, action, _), mut members) in periods {
        if members.len() == 1 {
            let (draft, original) = members.pop().expect("one member");
            out.push(draft.finish(original));
            continue;
        }
        let drafts = members.into_iter().map(|(d, _)| d).collect();
        out.push(fold(drafts, spec, combine_period(spec, &action))?.finish(None));
    }
    out.sort_by(|a, b| {
        (&a.note.subject, &a.note.action, a.note.time_range, &a.refined_id)
            .cmp(&(&b.note.subject, &b.note.action, b.note.time_range, &b.refined_id))
    });
    Ok(out)
}
