//! Note synthesis from released chunk groups.
//!
//! For every (subject, trigger) with enough events in a synthesis horizon, one
//! note is produced. Intensity comes from events per week and confidence from
//! distinct sources and attribute agreement; both bucketings are configuration.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::annotate::AnnotatedChunk;
use crate::ids::content_id;
use crate::ontology::{Aggregation, Kind, NoteShape, NoteTemplate, OntologySpec, Trigger};
use crate::organize::ChunkGroup;
use crate::time::{bucket_of, Instant, Span, TimeRange};
use crate::values::{Amount, AttrValue, Confidence, Intensity};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub note_id: String,
    pub subject: String,
    pub action: Trigger,
    #[serde(default)]
    pub attributes: BTreeMap<String, AttrValue>,
    pub intensity: Intensity,
    pub confidence: Confidence,
    /// `None` for notes built from undated chunks.
    pub time_range: Option<TimeRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub place: Option<String>,
    /// Sorted chunk ids, duplicates included.
    pub provenance: Vec<String>,
    pub template_id: String,
    pub event_count: u32,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub late: bool,
    pub schema_version: u32,
}

impl Note {
    /// Recomputes `note_id` from every other field.
    pub fn seal(mut self) -> Self {
        self.note_id = String::new();
        self.note_id = content_id("note", &self);
        self
    }

    pub fn shape(&self) -> NoteShape<'_> {
        NoteShape {
            entity: &self.action.entity,
            relationship: &self.action.relationship,
            intensity: self.intensity,
            confidence: self.confidence,
            attributes: &self.attributes,
        }
    }
}

/// The document a chunk id belongs to.
pub fn chunk_document(chunk_id: &str) -> &str {
    chunk_id.rsplit_once('/').map_or(chunk_id, |(doc, _)| doc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRule {
    pub min_sources: usize,
    pub min_agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    /// Must match the organizer's window length.
    pub window: Span,
    pub horizon_windows: u32,
    /// Lower bounds (events per week) of occasional, frequent, very_frequent.
    pub intensity_bounds: [f64; 3],
    pub high: ConfidenceRule,
    pub medium: ConfidenceRule,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            window: Span::days(7),
            horizon_windows: 4,
            intensity_bounds: [1.0, 2.0, 3.0],
            high: ConfidenceRule {
                min_sources: 3,
                min_agreement: 0.8,
            },
            medium: ConfidenceRule {
                min_sources: 2,
                min_agreement: 0.6,
            },
        }
    }
}

impl SynthesisConfig {
    pub fn horizon(&self) -> Span {
        self.window.times(self.horizon_windows)
    }

    pub fn horizon_of(&self, t: Instant) -> TimeRange {
        bucket_of(t, self.horizon())
    }

    pub fn intensity(&self, events_per_week: f64) -> Intensity {
        let [occasional, frequent, very] = self.intensity_bounds;
        if events_per_week >= very {
            Intensity::VeryFrequent
        } else if events_per_week >= frequent {
            Intensity::Frequent
        } else if events_per_week >= occasional {
            Intensity::Occasional
        } else {
            Intensity::Rare
        }
    }

    pub fn confidence(&self, sources: usize, agreement: f64) -> Confidence {
        let meets = |r: &ConfidenceRule| sources >= r.min_sources && agreement >= r.min_agreement;
        if meets(&self.high) {
            Confidence::High
        } else if meets(&self.medium) {
            Confidence::Medium
        } else {
            Confidence::Low
        }
    }
}

/// One trigger occurrence inside a chunk.
struct Event<'a> {
    chunk: &'a AnnotatedChunk,
    values: BTreeMap<String, AttrValue>,
}

fn event_in(chunk: &AnnotatedChunk, trigger: &Trigger) -> Option<BTreeMap<String, AttrValue>> {
    let entity = chunk
        .annotations
        .iter()
        .find(|a| a.kind == Kind::Entity && a.canonical_id == trigger.entity)?;
    let relationship = chunk
        .annotations
        .iter()
        .find(|a| a.kind == Kind::Relationship && a.canonical_id == trigger.relationship)?;
    let mut values = relationship.attributes.clone();
    values.extend(entity.attributes.clone());
    Some(values)
}

fn modal<'v>(values: impl IntoIterator<Item = &'v AttrValue>) -> Option<&'v AttrValue> {
    let mut counts: BTreeMap<String, (usize, &AttrValue)> = BTreeMap::new();
    for v in values {
        counts.entry(v.group_key()).or_insert((0, v)).0 += 1;
    }
    // BTreeMap order makes the smallest key win ties.
    let best = counts.values().map(|(n, _)| *n).max()?;
    counts.into_values().find(|(n, _)| *n == best).map(|(_, v)| v)
}

fn aggregate(how: Aggregation, values: &[&AttrValue]) -> Option<AttrValue> {
    if values.is_empty() {
        return None;
    }
    if how == Aggregation::Mode {
        return modal(values.iter().copied()).cloned();
    }
    if how == Aggregation::Count {
        return Some(AttrValue::Amount(Amount::count(values.len() as f64)));
    }
    let amounts: Vec<&Amount> = values
        .iter()
        .filter_map(|v| match v {
            AttrValue::Amount(a) => Some(a),
            _ => None,
        })
        .collect();
    let first = amounts.first()?;
    let numbers = amounts.iter().map(|a| a.value);
    let value = match how {
        Aggregation::Sum => numbers.sum(),
        Aggregation::Max => numbers.fold(f64::NEG_INFINITY, f64::max),
        Aggregation::Mean => numbers.sum::<f64>() / amounts.len() as f64,
        Aggregation::Count | Aggregation::Mode => unreachable!(),
    };
    Some(AttrValue::Amount(Amount {
        value,
        unit: first.unit.clone(),
    }))
}

fn agreement(events: &[Event<'_>]) -> f64 {
    let names: BTreeSet<&String> = events.iter().flat_map(|e| e.values.keys()).collect();
    if names.is_empty() || events.is_empty() {
        return 1.0;
    }
    let modes: BTreeMap<&String, String> = names
        .iter()
        .filter_map(|n| {
            modal(events.iter().filter_map(|e| e.values.get(*n))).map(|m| (*n, m.group_key()))
        })
        .collect();
    let consistent = events
        .iter()
        .filter(|e| {
            e.values
                .iter()
                .all(|(n, v)| modes.get(n).is_none_or(|m| *m == v.group_key()))
        })
        .count();
    consistent as f64 / events.len() as f64
}

fn build_note(
    subject: &str,
    template: &NoteTemplate,
    horizon: Option<TimeRange>,
    chunks: &[&AnnotatedChunk],
    late: bool,
    config: &SynthesisConfig,
) -> Option<Note> {
    let events: Vec<Event<'_>> = chunks
        .iter()
        .filter_map(|c| event_in(c, &template.trigger).map(|values| Event { chunk: c, values }))
        .collect();
    if events.is_empty() || (events.len() as u32) < template.min_events {
        return None;
    }
    let mut attributes = BTreeMap::new();
    for (name, how) in &template.attribute_aggregations {
        let values: Vec<&AttrValue> = events.iter().filter_map(|e| e.values.get(name)).collect();
        if let Some(v) = aggregate(*how, &values) {
            attributes.insert(name.clone(), v);
        }
    }
    let provenance: BTreeSet<String> = events
        .iter()
        .flat_map(|e| e.chunk.provenance.iter().cloned())
        .collect();
    let sources: BTreeSet<&str> = provenance.iter().map(|c| chunk_document(c)).collect();
    let places: BTreeSet<Option<&String>> = events.iter().map(|e| e.chunk.place.as_ref()).collect();
    let place = match places.into_iter().collect::<Vec<_>>().as_slice() {
        [Some(p)] => Some((*p).clone()),
        _ => None,
    };
    let per_week = events.len() as f64 / config.horizon().weeks();
    Some(
        Note {
            note_id: String::new(),
            subject: subject.to_string(),
            action: template.trigger.clone(),
            attributes,
            intensity: config.intensity(per_week),
            confidence: config.confidence(sources.len(), agreement(&events)),
            time_range: horizon,
            place,
            provenance: provenance.into_iter().collect(),
            template_id: template.template_id.clone(),
            event_count: events.len() as u32,
            late,
            schema_version: SCHEMA_VERSION,
        }
        .seal(),
    )
}

/// Synthesizes one note per (subject, trigger, horizon, late flag) over the
/// given groups. Output is sorted by note content, so it does not depend on
/// group order.
pub fn synthesize_notes(groups: &[ChunkGroup], spec: &OntologySpec, config: &SynthesisConfig) -> Vec<Note> {
    type Slot = (String, Option<TimeRange>, bool);
    let mut slots: BTreeMap<Slot, Vec<&AnnotatedChunk>> = BTreeMap::new();
    for group in groups {
        let horizon = group.window.map(|w| config.horizon_of(w.start));
        slots
            .entry((group.subject.clone(), horizon, group.late))
            .or_default()
            .extend(group.chunks.iter());
    }
    let mut notes = Vec::new();
    for ((subject, horizon, late), chunks) in &slots {
        for template in &spec.note_templates {
            notes.extend(build_note(subject, template, *horizon, chunks, *late, config));
        }
    }
    notes.sort_by(|a, b| {
        (&a.subject, &a.action, a.time_range, &a.note_id).cmp(&(&b.subject, &b.action, b.time_range, &b.note_id))
    });
    notes
}

/// Buffers released groups until their whole synthesis horizon is closed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Synthesizer {
    pool: Vec<ChunkGroup>,
    /// `subject|horizon start` keys already synthesized.
    done: BTreeSet<String>,
}

fn horizon_key(subject: &str, horizon: &TimeRange) -> String {
    format!("{subject}|{}", horizon.start.to_rfc3339())
}

impl Synthesizer {
    pub fn accept(&mut self, groups: impl IntoIterator<Item = ChunkGroup>) {
        self.pool.extend(groups);
    }

    pub fn pooled(&self) -> usize {
        self.pool.len()
    }

    /// Emits notes for every horizon with `end + watermark <= now`. Groups
    /// for a horizon already synthesized come out as late notes.
    pub fn synthesize(
        &mut self,
        now: Instant,
        watermark: Span,
        spec: &OntologySpec,
        config: &SynthesisConfig,
    ) -> Vec<Note> {
        let mut ready = Vec::new();
        let mut kept = Vec::new();
        for mut group in std::mem::take(&mut self.pool) {
            let Some(window) = group.window else {
                ready.push(group);
                continue;
            };
            let horizon = config.horizon_of(window.start);
            if horizon.end + watermark.as_chrono() > now {
                kept.push(group);
                continue;
            }
            group.late = self.done.contains(&horizon_key(&group.subject, &horizon));
            ready.push(group);
        }
        for group in &ready {
            if let Some(w) = group.window {
                self.done.insert(horizon_key(&group.subject, &config.horizon_of(w.start)));
            }
        }
        self.pool = kept;
        synthesize_notes(&ready, spec, config)
    }
}
