//! Groups annotated chunks by subject, time window and place, folds repeated
//! reports of one event together, and releases windows once their watermark
//! has passed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::AnnotatedChunk;
use crate::time::{bucket_of, Instant, Span, TimeRange};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OrganizeError {
    #[error("window length must be positive")]
    ZeroWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrganizeConfig {
    pub window: Span,
    pub epsilon: Span,
    pub watermark: Span,
}

impl Default for OrganizeConfig {
    fn default() -> Self {
        OrganizeConfig {
            window: Span::days(7),
            epsilon: Span::hours(24),
            watermark: Span::days(2),
        }
    }
}

pub const ANY_PLACE: &str = "*";

/// Lowercased, whitespace-collapsed place, or the wildcard.
pub fn place_key(place: Option<&str>) -> String {
    let normalized = place
        .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase())
        .unwrap_or_default();
    if normalized.is_empty() {
        ANY_PLACE.to_string()
    } else {
        normalized
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkGroup {
    pub subject: String,
    /// `None` for the per-subject catch-all group of undated chunks.
    pub window: Option<TimeRange>,
    pub place_key: String,
    pub chunks: Vec<AnnotatedChunk>,
    /// Supplemental group for a window that had already been released.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub late: bool,
    /// Release number of this key, starting at 0.
    #[serde(default)]
    pub seq: u32,
}

impl ChunkGroup {
    pub fn key(&self) -> String {
        group_key(&self.subject, self.window.as_ref(), &self.place_key)
    }
}

fn group_key(subject: &str, window: Option<&TimeRange>, place: &str) -> String {
    let w = window.map_or_else(|| "undated".to_string(), |w| w.start.to_rfc3339());
    format!("{subject}|{w}|{place}")
}

fn chunk_order(a: &AnnotatedChunk, b: &AnnotatedChunk) -> std::cmp::Ordering {
    (a.time, &a.doc_id, a.sentence_index).cmp(&(b.time, &b.doc_id, b.sentence_index))
}

/// Buckets chunks into epoch-aligned half-open windows. Groups come back in
/// key order with chunks sorted by (time, doc_id, sentence_index).
pub fn assign_windows(chunks: &[AnnotatedChunk], window_length: Span) -> Result<Vec<ChunkGroup>, OrganizeError> {
    if window_length.is_zero() {
        return Err(OrganizeError::ZeroWindow);
    }
    let mut groups: BTreeMap<(String, Option<TimeRange>, String), Vec<AnnotatedChunk>> = BTreeMap::new();
    for chunk in chunks {
        let key = match chunk.time {
            Some(t) => (
                chunk.subject.clone(),
                Some(bucket_of(t, window_length)),
                place_key(chunk.place.as_deref()),
            ),
            None => (chunk.subject.clone(), None, ANY_PLACE.to_string()),
        };
        groups.entry(key).or_default().push(chunk.clone());
    }
    Ok(groups
        .into_iter()
        .map(|((subject, window, place_key), mut chunks)| {
            chunks.sort_by(chunk_order);
            ChunkGroup {
                subject,
                window,
                place_key,
                chunks,
                late: false,
                seq: 0,
            }
        })
        .collect())
}

fn seconds_between(a: Option<Instant>, b: Option<Instant>) -> i64 {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).num_seconds().abs(),
        _ => 0,
    }
}

/// Folds duplicate reports: same subject, same annotation multiset, and times
/// within `epsilon`. The earliest report survives and inherits the others'
/// provenance.
pub fn dedupe_group(group: &ChunkGroup, epsilon: Span) -> ChunkGroup {
    let mut sorted = group.chunks.clone();
    sorted.sort_by(chunk_order);
    let mut survivors: Vec<AnnotatedChunk> = Vec::new();
    for chunk in sorted {
        let twin = survivors.iter_mut().rev().find(|s| {
            s.subject == chunk.subject && s.signature() == chunk.signature()
        });
        match twin {
            Some(s) if seconds_between(s.time, chunk.time) <= epsilon.seconds() => {
                s.provenance.extend(chunk.provenance);
                s.provenance.sort();
                s.provenance.dedup();
            }
            _ => survivors.push(chunk),
        }
    }
    ChunkGroup {
        chunks: survivors,
        ..group.clone()
    }
}

/// Holds chunks until their window can be released.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Organizer {
    pub config: OrganizeConfig,
    pending: Vec<AnnotatedChunk>,
    /// Release count per group key.
    released: BTreeMap<String, u32>,
}

impl Organizer {
    pub fn new(config: OrganizeConfig) -> Self {
        Organizer {
            config,
            ..Organizer::default()
        }
    }

    pub fn add(&mut self, chunks: impl IntoIterator<Item = AnnotatedChunk>) {
        self.pending.extend(chunks);
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Releases every group whose `window.end + watermark <= now`, deduped.
    /// Undated groups release on every call.
    pub fn close_window(&mut self, now: Instant) -> Result<Vec<ChunkGroup>, OrganizeError> {
        let groups = assign_windows(&self.pending, self.config.window)?;
        let watermark = self.config.watermark.as_chrono();
        let mut out = Vec::new();
        let mut kept = Vec::new();
        for group in groups {
            let ready = group.window.is_none_or(|w| w.end + watermark <= now);
            if !ready {
                kept.extend(group.chunks);
                continue;
            }
            let key = group.key();
            let count = self.released.entry(key).or_insert(0);
            let mut released = dedupe_group(&group, self.config.epsilon);
            released.seq = *count;
            released.late = group.window.is_some() && *count > 0;
            *count += 1;
            out.push(released);
        }
        kept.sort_by(chunk_order);
        self.pending = kept;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::Annotation;
    use crate::ontology::Kind;
    use crate::time::parse_instant;
    use proptest::prelude::*;

    fn t(s: &str) -> Instant {
        parse_instant(s).unwrap()
    }

    fn chunk(doc: &str, time: Option<Instant>, ids: &[&str]) -> AnnotatedChunk {
        let id = format!("{doc}/0");
        AnnotatedChunk {
            chunk_id: id.clone(),
            doc_id: doc.into(),
            sentence_index: 0,
            subject: "A".into(),
            time,
            place: None,
            annotations: ids
                .iter()
                .map(|c| Annotation {
                    span: (0, 1),
                    surface: c.to_string(),
                    canonical_id: c.to_string(),
                    kind: Kind::Entity,
                    attributes: Default::default(),
                })
                .collect(),
            provenance: vec![id],
        }
    }

    #[test]
    fn same_week_same_group() {
        let chunks = [
            chunk("d1", Some(t("2020-01-02T10:00:00Z")), &["beer"]),
            chunk("d2", Some(t("2020-01-05T00:00:00Z")), &["beer"]),
        ];
        let groups = assign_windows(&chunks, Span::days(7)).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].chunks.len(), 2);
    }

    #[test]
    fn boundary_goes_to_later_window() {
        let week = Span::days(7);
        let boundary = bucket_of(t("2020-01-05T00:00:00Z"), week).end;
        let groups = assign_windows(&[chunk("d1", Some(boundary), &["beer"])], week).unwrap();
        assert_eq!(groups[0].window.unwrap().start, boundary);
    }

    #[test]
    fn zero_window_rejected() {
        assert_eq!(assign_windows(&[], Span::days(0)), Err(OrganizeError::ZeroWindow));
    }

    #[test]
    fn places_and_undated_split_groups() {
        let mut a = chunk("d1", Some(t("2020-01-02T10:00:00Z")), &["beer"]);
        a.place = Some("  The   Party ".into());
        let mut b = chunk("d2", Some(t("2020-01-03T10:00:00Z")), &["beer"]);
        b.place = Some("the party".into());
        let c = chunk("d3", None, &["beer"]);
        let groups = assign_windows(&[a, b, c], Span::days(7)).unwrap();
        assert_eq!(groups.len(), 2);
        assert!(groups[0].window.is_none());
        assert_eq!(groups[1].place_key, "the party");
    }

    fn single(chunks: Vec<AnnotatedChunk>) -> ChunkGroup {
        ChunkGroup {
            subject: "A".into(),
            window: None,
            place_key: ANY_PLACE.into(),
            chunks,
            late: false,
            seq: 0,
        }
    }

    #[test]
    fn reports_an_hour_apart_fold() {
        let g = single(vec![
            chunk("d2", Some(t("2020-01-02T11:00:00Z")), &["beer", "consume"]),
            chunk("d1", Some(t("2020-01-02T10:00:00Z")), &["consume", "beer"]),
        ]);
        let out = dedupe_group(&g, Span::hours(24));
        assert_eq!(out.chunks.len(), 1);
        assert_eq!(out.chunks[0].doc_id, "d1");
        assert_eq!(out.chunks[0].provenance, ["d1/0", "d2/0"]);
    }

    #[test]
    fn reports_two_days_apart_stay() {
        let g = single(vec![
            chunk("d1", Some(t("2020-01-02T10:00:00Z")), &["beer"]),
            chunk("d2", Some(t("2020-01-04T10:00:00Z")), &["beer"]),
        ]);
        assert_eq!(dedupe_group(&g, Span::hours(24)).chunks.len(), 2);
    }

    #[test]
    fn watermark_gates_release() {
        let mut org = Organizer::new(OrganizeConfig::default());
        let time = t("2020-01-03T10:00:00Z");
        let end = bucket_of(time, Span::days(7)).end;
        org.add([chunk("d1", Some(time), &["beer"])]);
        assert!(org.close_window(end + chrono::Duration::days(1)).unwrap().is_empty());
        let released = org.close_window(end + chrono::Duration::days(3)).unwrap();
        assert_eq!(released.len(), 1);
        assert!(!released[0].late);
        assert_eq!(org.pending(), 0);

        org.add([chunk("d9", Some(time), &["wine"])]);
        let late = org.close_window(end + chrono::Duration::days(4)).unwrap();
        assert_eq!(late.len(), 1);
        assert!(late[0].late);
        assert_eq!(late[0].seq, 1);
        assert_eq!(late[0].key(), released[0].key());
    }

    #[test]
    fn undated_release_immediately() {
        let mut org = Organizer::new(OrganizeConfig::default());
        org.add([chunk("d1", None, &["beer"])]);
        let out = org.close_window(t("1970-01-01")).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].window.is_none());
    }

    fn arb_group() -> impl Strategy<Value = ChunkGroup> {
        let one = (0u8..8, 0i64..96, prop::sample::subsequence(vec!["beer", "wine", "consume"], 0..=3), any::<bool>());
        prop::collection::vec(one, 0..14).prop_map(|raw| {
            let base = t("2020-01-02T00:00:00Z");
            single(
                raw.into_iter()
                    .enumerate()
                    .map(|(i, (doc, hours, ids, dated))| {
                        let mut c = chunk(
                            &format!("d{doc}"),
                            dated.then(|| base + chrono::Duration::hours(hours)),
                            &ids,
                        );
                        c.sentence_index = i;
                        c.chunk_id = format!("d{doc}/{i}");
                        c.provenance = vec![c.chunk_id.clone()];
                        c
                    })
                    .collect(),
            )
        })
    }

    proptest! {
        #[test]
        fn dedupe_is_idempotent(g in arb_group(), eps in 0u32..48) {
            let once = dedupe_group(&g, Span::hours(eps));
            prop_assert_eq!(dedupe_group(&once, Span::hours(eps)), once);
        }

        #[test]
        fn dedupe_ignores_input_order(g in arb_group(), eps in 0u32..48, seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = g.clone();
            shuffled.chunks.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(dedupe_group(&g, Span::hours(eps)), dedupe_group(&shuffled, Span::hours(eps)));
        }

        #[test]
        fn dedupe_loses_no_provenance(g in arb_group(), eps in 0u32..48) {
            let out = dedupe_group(&g, Span::hours(eps));
            let mut before: Vec<_> = g.chunks.iter().map(|c| c.chunk_id.clone()).collect();
            let mut after: Vec<_> = out.chunks.iter().flat_map(|c| c.provenance.clone()).collect();
            before.sort();
            after.sort();
            prop_assert_eq!(before, after);
        }

        #[test]
        fn every_dated_chunk_lands_in_its_window(g in arb_group(), days in 1u32..10) {
            let groups = assign_windows(&g.chunks, Span::days(days)).unwrap();
            let total: usize = groups.iter().map(|x| x.chunks.len()).sum();
            prop_assert_eq!(total, g.chunks.len());
            for group in &groups {
                for c in &group.chunks {
                    match (group.window, c.time) {
                        (Some(w), Some(time)) => prop_assert!(w.contains(time)),
                        (None, None) => {}
                        _ => prop_assert!(false, "dated/undated mix"),
                    }
                }
            }
        }
    }
}
