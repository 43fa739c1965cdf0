//! The card manager: the only code path that writes the Card DB.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{map_note_to_criteria, Card, CardDb, CardError, CardStatus, EventKind, ReasoningEvent};
use crate::ontology::{OntologySpec, Resolution};
use crate::refine::RefinedNote;
use crate::time::{Instant, Span};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Conflict {
    pub rule_id: String,
    /// The smaller card id of the pair.
    pub card_a: String,
    pub card_b: String,
    pub resolution: Resolution,
}

fn conflict_between(a: &Card, b: &Card, spec: &OntologySpec) -> Option<Conflict> {
    if a.subject != b.subject || a.card_id == b.card_id || !a.validity.overlaps(&b.validity) {
        return None;
    }
    let rule = spec.exclusion_between(&a.concept_id, &b.concept_id)?;
    let (card_a, card_b) = if a.card_id < b.card_id {
        (a.card_id.clone(), b.card_id.clone())
    } else {
        (b.card_id.clone(), a.card_id.clone())
    };
    Some(Conflict {
        rule_id: rule.id.clone(),
        card_a,
        card_b,
        resolution: rule.resolution,
    })
}

/// Every (candidate, candidate-or-committed) pair on one subject with
/// overlapping validity that an exclusion rule covers. Sorted, no repeats.
pub fn detect_conflicts<'c>(
    candidates: &[Card],
    committed: impl IntoIterator<Item = &'c Card>,
    spec: &OntologySpec,
) -> Vec<Conflict> {
    let committed: Vec<&Card> = committed.into_iter().collect();
    let mut out = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        for other in &candidates[i + 1..] {
            out.extend(conflict_between(c, other, spec));
        }
        for other in &committed {
            out.extend(conflict_between(c, other, spec));
        }
    }
    out.sort();
    out.dedup();
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProcessReport {
    pub committed: Vec<String>,
    pub expired: Vec<String>,
    pub blocked: Vec<String>,
    pub conflicts: Vec<Conflict>,
    /// Conflicts actually resolved; pairs whose card already expired earlier
    /// in the batch are skipped.
    pub resolved: usize,
}

/// Cards taking part in one processing step: candidates plus the committed
/// cards they touch. Every change is recorded as events per card.
struct Workspace {
    cards: BTreeMap<String, Card>,
    events: BTreeMap<String, Vec<ReasoningEvent>>,
    blocked: Vec<String>,
}

/// Applies one conflict's resolution. Returns the events added to each card.
pub fn resolve_conflict(
    conflict: &Conflict,
    a: &mut Card,
    b: &mut Card,
    now: Instant,
) -> (Vec<ReasoningEvent>, Vec<ReasoningEvent>) {
    let detected = |other: &str| {
        ReasoningEvent::new(EventKind::ConflictDetected, now)
            .rule(&conflict.rule_id)
            .counterpart(other)
    };
    let mut ev_a = vec![detected(&b.card_id)];
    let mut ev_b = vec![detected(&a.card_id)];
    match conflict.resolution {
        Resolution::ExpireOlder => {
            let tie = a.validity.start == b.validity.start;
            let a_older = (a.validity.start, &a.card_id) < (b.validity.start, &b.card_id);
            let (older, older_events, newer_id) = if a_older {
                (&mut *a, &mut ev_a, b.card_id.clone())
            } else {
                (&mut *b, &mut ev_b, a.card_id.clone())
            };
            older.status = CardStatus::Expired;
            older.validity.end = Some(now);
            let mut expired = ReasoningEvent::new(EventKind::Expired, now)
                .rule(&conflict.rule_id)
                .counterpart(&newer_id);
            if tie {
                expired = expired.message("equal validity start; smaller card id expires");
            }
            older_events.push(expired);
        }
        Resolution::FlagOnly => {
            a.flagged = true;
            b.flagged = true;
            let flag = |other: &str| {
                ReasoningEvent::new(EventKind::Flagged, now)
                    .rule(&conflict.rule_id)
                    .counterpart(other)
            };
            ev_a.push(flag(&b.card_id));
            ev_b.push(flag(&a.card_id));
        }
    }
    a.reasoning_trail.extend(ev_a.iter().cloned());
    b.reasoning_trail.extend(ev_b.iter().cloned());
    (ev_a, ev_b)
}

/// Commits a card. Fails below threshold or when an exclusion conflict with
/// a committed card is still standing.
pub fn commit_card(db: &mut CardDb, mut card: Card, spec: &OntologySpec, now: Instant) -> Result<Card, CardError> {
    if !card.meets_threshold() {
        return Err(CardError::BelowThreshold {
            card_id: card.card_id,
            met: card.criteria_met,
            threshold: card.threshold,
        });
    }
    if card.validity.start.is_none() {
        card.validity.start = Some(now);
    }
    if let Some(c) = detect_conflicts(std::slice::from_ref(&card), db.committed(), spec).first() {
        let counterpart = if c.card_a == card.card_id { &c.card_b } else { &c.card_a };
        return Err(CardError::Blocked {
            card_id: card.card_id.clone(),
            rule_id: c.rule_id.clone(),
            counterpart: counterpart.clone(),
        });
    }
    card.status = CardStatus::Committed;
    let event = ReasoningEvent::new(EventKind::Committed, now);
    card.push_event(event.clone());
    db.record(&card, &[event])?;
    Ok(card)
}

fn record_workspace(db: &mut CardDb, ws: &Workspace, ids: impl IntoIterator<Item = String>) -> Result<(), CardError> {
    for id in ids {
        if let Some(events) = ws.events.get(&id) {
            db.record(&ws.cards[&id], events)?;
        }
    }
    Ok(())
}

/// Runs candidates through conflict detection, resolution and commit.
pub fn process(db: &mut CardDb, candidates: Vec<Card>, spec: &OntologySpec, now: Instant) -> Result<ProcessReport, CardError> {
    let mut candidates = candidates;
    for c in &mut candidates {
        c.validity.start.get_or_insert(now);
    }
    candidates.sort_by(|a, b| a.card_id.cmp(&b.card_id));
    let conflicts = detect_conflicts(&candidates, db.committed(), spec);
    let candidate_ids: Vec<String> = candidates.iter().map(|c| c.card_id.clone()).collect();

    let mut ws = Workspace {
        cards: candidates.into_iter().map(|c| (c.card_id.clone(), c)).collect(),
        events: BTreeMap::new(),
        blocked: Vec::new(),
    };
    for c in &conflicts {
        for id in [&c.card_a, &c.card_b] {
            if !ws.cards.contains_key(id) {
                let committed = db.get(id).expect("conflicts reference known cards").clone();
                ws.cards.insert(id.clone(), committed);
            }
        }
    }

    let mut report = ProcessReport {
        conflicts: conflicts.clone(),
        ..ProcessReport::default()
    };
    for conflict in &conflicts {
        let mut a = ws.cards[&conflict.card_a].clone();
        let mut b = ws.cards[&conflict.card_b].clone();
        if a.status == CardStatus::Expired || b.status == CardStatus::Expired {
            continue;
        }
        let (ev_a, ev_b) = resolve_conflict(conflict, &mut a, &mut b, now);
        report.resolved += 1;
        for (card, events) in [(a, ev_a), (b, ev_b)] {
            if card.status == CardStatus::Expired {
                report.expired.push(card.card_id.clone());
            }
            if conflict.resolution == Resolution::FlagOnly && candidate_ids.contains(&card.card_id) {
                ws.blocked.push(card.card_id.clone());
            }
            ws.events.entry(card.card_id.clone()).or_default().extend(events);
            ws.cards.insert(card.card_id.clone(), card);
        }
    }
    // Persist resolutions on committed cards and on candidates that were
    // expired or blocked before they could commit.
    let touched: Vec<String> = ws.events.keys().cloned().collect();
    let (for_commit, settled): (Vec<String>, Vec<String>) = touched.into_iter().partition(|id| {
        candidate_ids.contains(id) && ws.cards[id].status == CardStatus::Premature && !ws.blocked.contains(id)
    });
    record_workspace(db, &ws, settled)?;

    for id in &candidate_ids {
        let card = &ws.cards[id];
        if card.status != CardStatus::Premature || ws.blocked.contains(id) {
            continue;
        }
        let mut card = card.clone();
        if for_commit.contains(id) {
            // Commit event follows this card's resolution events in one write.
            let events = ws.events[id].clone();
            db.record(&card, &events)?;
            card = db.get(id).expect("just recorded").clone();
        }
        let committed = commit_card(db, card, spec, now)?;
        report.committed.push(committed.card_id);
    }
    ws.blocked.sort();
    ws.blocked.dedup();
    report.blocked = ws.blocked;
    report.expired.sort();
    report.expired.dedup();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemakeTicket {
    pub card_id: String,
    pub requested_at: Instant,
    pub ready_at: Instant,
}

/// Schedules a rebuild of a committed card after `waiting_period`. The
/// committed set does not change until the remake completes.
pub fn request_remake(db: &mut CardDb, card_id: &str, waiting_period: Span, now: Instant) -> Result<RemakeTicket, CardError> {
    let mut card = db.get(card_id).cloned().ok_or_else(|| CardError::UnknownCard(card_id.to_string()))?;
    if card.status != CardStatus::Committed {
        return Err(CardError::NotCommitted(card_id.to_string()));
    }
    let ticket = RemakeTicket {
        card_id: card_id.to_string(),
        requested_at: now,
        ready_at: now + waiting_period.as_chrono(),
    };
    let event = ReasoningEvent::new(EventKind::RemakeRequested, now).message(format!("ready at {}", ticket.ready_at.to_rfc3339()));
    card.push_event(event.clone());
    db.record(&card, &[event])?;
    Ok(ticket)
}

/// Rebuilds the card with refined notes stored after its last evidence,
/// supersedes the old version, and sends the rebuild through [`process`].
/// `refined` must be in store order.
pub fn complete_remake(
    db: &mut CardDb,
    ticket: &RemakeTicket,
    now: Instant,
    spec: &OntologySpec,
    refined: &[RefinedNote],
) -> Result<(Card, ProcessReport), CardError> {
    if now < ticket.ready_at {
        return Err(CardError::RemakeTooEarly {
            card_id: ticket.card_id.clone(),
            ready_at: ticket.ready_at,
        });
    }
    let mut old = db
        .get(&ticket.card_id)
        .cloned()
        .ok_or_else(|| CardError::UnknownCard(ticket.card_id.clone()))?;
    if old.status != CardStatus::Committed {
        return Err(CardError::NotCommitted(old.card_id));
    }
    let concept = spec
        .concept(&old.concept_id)
        .ok_or_else(|| CardError::UnknownConcept(old.concept_id.clone()))?;

    let evidence = old.evidence_ids();
    let last = refined
        .iter()
        .rposition(|r| evidence.contains(&r.refined_id.as_str()))
        .map_or(0, |p| p + 1);
    let mut rebuilt = Card::new(concept, &old.subject, old.revision + 1);
    for (index, dim) in &old.dimensions {
        for id in &dim.evidence {
            rebuilt.add_evidence(*index, id);
        }
    }
    rebuilt.validity.start = old.validity.start;
    for note in refined[last..].iter().filter(|r| r.note.subject == old.subject) {
        let mut hit = false;
        for (concept_id, index) in map_note_to_criteria(&note.note, spec) {
            if concept_id == old.concept_id {
                rebuilt.add_evidence(index, &note.refined_id);
                hit = true;
            }
        }
        if hit {
            if let Some(range) = note.note.time_range {
                rebuilt.validity.start = rebuilt.validity.start.max(Some(range.start));
            }
        }
    }
    rebuilt.supersedes = Some(old.card_id.clone());
    let done = ReasoningEvent::new(EventKind::RemakeCompleted, now);
    rebuilt.push_event(done.clone().counterpart(&old.card_id));

    old.status = CardStatus::Superseded;
    old.validity.end = Some(now);
    old.superseded_by = Some(rebuilt.card_id.clone());
    let old_event = done.counterpart(&rebuilt.card_id);
    old.push_event(old_event.clone());
    db.record(&old, &[old_event])?;

    let report = process(db, vec![rebuilt.clone()], spec, now)?;
    let stored = db.get(&rebuilt.card_id).cloned().unwrap_or(rebuilt);
    Ok((stored, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cards::maker::tests::refined;
    use crate::cards::tests::mood;
    use crate::time::{from_unix, parse_instant};
    use proptest::prelude::*;

    fn t(s: &str) -> Instant {
        parse_instant(s).unwrap()
    }

    fn card(concept: &str, subject: &str, rev: u32, start: Option<Instant>) -> Card {
        let spec = mood();
        let mut c = Card::new(spec.concept(concept).unwrap(), subject, rev);
        c.add_evidence(1, &format!("r-{concept}-{subject}-{rev}"));
        c.validity.start = start;
        c
    }

    #[test]
    fn below_threshold_rejected() {
        let spec = mood();
        let empty = Card::new(spec.concept("anxiety").unwrap(), "A", 1);
        let err = commit_card(&mut CardDb::in_memory(), empty, &spec, t("2020-01-01"));
        assert!(matches!(err, Err(CardError::BelowThreshold { met: 0, threshold: 1, .. })));
    }

    #[test]
    fn anxiety_expires_when_upbeat_arrives() {
        let spec = mood();
        let mut db = CardDb::in_memory();
        let now = t("2020-06-01");
        process(&mut db, vec![card("anxiety", "A", 1, Some(t("2020-01-01")))], &spec, now).unwrap();
        let report = process(&mut db, vec![card("upbeat", "A", 1, Some(t("2020-05-01")))], &spec, now).unwrap();
        assert_eq!(report.committed, ["upbeat@A#1"]);
        assert_eq!(report.expired, ["anxiety@A#1"]);
        let old = db.get("anxiety@A#1").unwrap();
        assert_eq!(old.status, CardStatus::Expired);
        assert_eq!(old.validity.end, Some(now));
        let kinds: Vec<EventKind> = old.reasoning_trail.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, [EventKind::Committed, EventKind::ConflictDetected, EventKind::Expired]);
        let new_kinds: Vec<EventKind> = db.get("upbeat@A#1").unwrap().reasoning_trail.iter().map(|e| e.kind).collect();
        assert_eq!(new_kinds, [EventKind::ConflictDetected, EventKind::Committed]);
    }

    #[test]
    fn flag_only_blocks_and_expires_nothing() {
        let spec = mood();
        let mut db = CardDb::in_memory();
        let now = t("2020-06-01");
        process(&mut db, vec![card("anxiety", "A", 1, Some(t("2020-01-01")))], &spec, now).unwrap();
        let report = process(&mut db, vec![card("calm", "A", 1, Some(t("2020-05-01")))], &spec, now).unwrap();
        assert_eq!(report.blocked, ["calm@A#1"]);
        assert!(report.expired.is_empty() && report.committed.is_empty());
        assert!(db.get("anxiety@A#1").unwrap().flagged);
        assert_eq!(db.get("anxiety@A#1").unwrap().status, CardStatus::Committed);
        assert_eq!(db.get("calm@A#1").unwrap().status, CardStatus::Premature);
        let err = commit_card(&mut db, card("calm", "A", 1, Some(t("2020-05-01"))), &spec, now);
        assert!(matches!(err, Err(CardError::Blocked { .. })));
    }

    #[test]
    fn equal_starts_break_by_card_id() {
        let spec = mood();
        let mut db = CardDb::in_memory();
        let start = Some(t("2020-01-01"));
        let report = process(
            &mut db,
            vec![card("upbeat", "A", 1, start), card("anxiety", "A", 1, start)],
            &spec,
            t("2020-02-01"),
        )
        .unwrap();
        assert_eq!(report.expired, ["anxiety@A#1"]);
        assert_eq!(report.committed, ["upbeat@A#1"]);
        let trail = &db.get("anxiety@A#1").unwrap().reasoning_trail;
        assert!(trail.iter().any(|e| e.detail.message.as_deref().is_some_and(|m| m.contains("smaller card id"))));
    }

    #[test]
    fn pairwise_exclusive_candidates() {
        // n anxiety/upbeat cards on one subject: anxiety x upbeat pairs conflict.
        let spec = mood();
        let cards: Vec<Card> = (1..=3)
            .flat_map(|r| [card("anxiety", "A", r, Some(t("2020-01-01"))), card("upbeat", "A", r, Some(t("2020-01-01")))])
            .collect();
        let found = detect_conflicts(&cards, std::iter::empty(), &spec);
        let oracle = cards
            .iter()
            .enumerate()
            .flat_map(|(i, a)| cards[i + 1..].iter().map(move |b| (a, b)))
            .filter(|(a, b)| a.concept_id != b.concept_id)
            .count();
        assert_eq!(found.len(), oracle);
        assert!(detect_conflicts(&cards[..1], std::iter::empty(), &spec).is_empty());
    }

    #[test]
    fn remake_gates_and_rebuilds() {
        let spec = mood();
        let mut db = CardDb::in_memory();
        let now = t("2020-06-01");
        let first = refined("worry", "1");
        let mut c = Card::new(spec.concept("anxiety").unwrap(), "A", 1);
        c.add_evidence(1, &first.refined_id);
        process(&mut db, vec![c], &spec, now).unwrap();

        assert!(matches!(request_remake(&mut db, "nope", Span::days(2), now), Err(CardError::UnknownCard(_))));
        let ticket = request_remake(&mut db, "anxiety@A#1", Span::days(2), now).unwrap();
        assert_eq!(db.committed().count(), 1);
        let early = complete_remake(&mut db, &ticket, now + chrono::Duration::days(1), &spec, std::slice::from_ref(&first));
        assert!(matches!(early, Err(CardError::RemakeTooEarly { .. })));

        let store = vec![refined("cheer", "0"), first.clone(), refined("worry", "2"), refined("cheer", "3")];
        let (rebuilt, report) = complete_remake(&mut db, &ticket, ticket.ready_at, &spec, &store).unwrap();
        assert_eq!(rebuilt.card_id, "anxiety@A#2");
        assert_eq!(rebuilt.dimensions[&1].evidence, ["r-1", "r-2"]);
        assert_eq!(report.committed, ["anxiety@A#2"]);
        let old = db.get("anxiety@A#1").unwrap();
        assert_eq!(old.status, CardStatus::Superseded);
        assert_eq!(old.superseded_by.as_deref(), Some("anxiety@A#2"));
    }

    #[test]
    fn remake_without_new_notes_is_a_fixpoint() {
        let spec = mood();
        let mut db = CardDb::in_memory();
        let now = t("2020-06-01");
        let first = refined("worry", "1");
        let mut c = Card::new(spec.concept("anxiety").unwrap(), "A", 1);
        c.add_evidence(1, &first.refined_id);
        process(&mut db, vec![c.clone()], &spec, now).unwrap();
        let ticket = request_remake(&mut db, "anxiety@A#1", Span::days(2), now).unwrap();
        let (rebuilt, _) = complete_remake(&mut db, &ticket, ticket.ready_at, &spec, &[first]).unwrap();
        assert_eq!(rebuilt.dimensions, c.dimensions);
    }

    proptest! {
        #[test]
        fn expire_older_never_leaves_overlapping_exclusive_cards(
            steps in prop::collection::vec(prop::collection::vec((any::<bool>(), 0u8..2, 0i64..50), 1..4), 1..6),
        ) {
            let spec = mood();
            let mut db = CardDb::in_memory();
            let mut rev = 0;
            for (i, batch) in steps.iter().enumerate() {
                let now = from_unix((100 + i as i64) * 86_400);
                let cards: Vec<Card> = batch.iter().map(|(anx, subj, day)| {
                    rev += 1;
                    let concept = if *anx { "anxiety" } else { "upbeat" };
                    card(concept, ["A", "B"][*subj as usize], rev, Some(from_unix(day * 86_400)))
                }).collect();
                process(&mut db, cards, &spec, now).unwrap();
                let committed: Vec<&Card> = db.committed().collect();
                for (j, a) in committed.iter().enumerate() {
                    for b in &committed[j + 1..] {
                        let exclusive = a.concept_id != b.concept_id;
                        prop_assert!(!(exclusive && a.subject == b.subject && a.validity.overlaps(&b.validity)));
                    }
                }
            }
            for c in db.cards().filter(|c| c.status == CardStatus::Expired) {
                prop_assert!(c.validity.end.is_some());
                let ev = c.reasoning_trail.iter().find(|e| e.kind == EventKind::Expired).unwrap();
                let other = db.get(ev.detail.counterpart.as_deref().unwrap()).unwrap();
                prop_assert!((c.validity.start, &c.card_id) < (other.validity.start, &other.card_id));
            }
        }
    }
}
