use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{map_note_to_criteria, Card};
use crate::ontology::OntologySpec;
use crate::refine::RefinedNote;

fn slot_key(subject: &str, concept: &str) -> String {
    format!("{subject}|{concept}")
}

/// Accumulates evidence into premature cards, one per (subject, concept),
/// and hands a card to the manager the first time it reaches its threshold.
/// Later evidence for a handed-off slot reaches the card through a remake.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CardMaker {
    slots: BTreeMap<String, Card>,
    handed_off: BTreeSet<String>,
}

impl CardMaker {
    pub fn premature(&self) -> impl Iterator<Item = &Card> {
        self.slots.values()
    }

    pub fn premature_count(&self) -> usize {
        self.slots.len()
    }

    /// Folds `notes` in, returning cards that just reached threshold, in
    /// card-id order.
    pub fn update_premature_cards(&mut self, notes: &[RefinedNote], spec: &OntologySpec) -> Vec<Card> {
        let mut touched = BTreeSet::new();
        for note in notes {
            for (concept_id, index) in map_note_to_criteria(&note.note, spec) {
                let key = slot_key(&note.note.subject, &concept_id);
                if self.handed_off.contains(&key) {
                    continue;
                }
                let concept = spec.concept(&concept_id).expect("mapped concepts exist");
                let card = self
                    .slots
                    .entry(key.clone())
                    .or_insert_with(|| Card::new(concept, &note.note.subject, 1));
                card.add_evidence(index, &note.refined_id);
                if let Some(range) = note.note.time_range {
                    card.validity.start = card.validity.start.max(Some(range.start));
                }
                touched.insert(key);
            }
        }
        let mut ready = Vec::new();
        for key in touched {
            if self.slots[&key].meets_threshold() {
                ready.push(self.slots.remove(&key).expect("slot exists"));
                self.handed_off.insert(key);
            }
        }
        ready.sort_by(|a, b| a.card_id.cmp(&b.card_id));
        ready
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::cards::tests::mood;
    use crate::notes::{Note, SCHEMA_VERSION};
    use crate::ontology::Trigger;
    use crate::values::{Confidence, Intensity};
    use proptest::prelude::*;

    pub(crate) fn refined(entity: &str, tag: &str) -> RefinedNote {
        let note = Note {
            note_id: format!("n-{tag}"),
            subject: "A".into(),
            action: Trigger {
                entity: entity.into(),
                relationship: "shows".into(),
            },
            attributes: Default::default(),
            intensity: Intensity::Rare,
            confidence: Confidence::Low,
            time_range: None,
            place: None,
            provenance: vec![format!("d-{tag}/0")],
            template_id: "t".into(),
            event_count: 1,
            late: false,
            schema_version: SCHEMA_VERSION,
        };
        RefinedNote {
            refined_id: format!("r-{tag}"),
            sources: vec![note.note_id.clone()],
            note,
            applied_rules: vec![],
            passthrough: true,
        }
    }

    #[test]
    fn hands_off_once_then_ignores_the_slot() {
        let spec = mood();
        let mut maker = CardMaker::default();
        assert!(maker.update_premature_cards(&[], &spec).is_empty());
        let out = maker.update_premature_cards(&[refined("worry", "1")], &spec);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].card_id, "anxiety@A#1");
        assert!(maker.update_premature_cards(&[refined("worry", "2")], &spec).is_empty());
        assert_eq!(maker.premature_count(), 0);
    }

    #[test]
    fn one_note_can_feed_several_concepts() {
        let out = CardMaker::default().update_premature_cards(&[refined("cheer", "1")], &mood());
        let ids: Vec<_> = out.iter().map(|c| c.card_id.as_str()).collect();
        assert_eq!(ids, ["calm@A#1", "upbeat@A#1"]);
    }

    proptest! {
        #[test]
        fn evidence_is_monotone(tags in prop::collection::vec(0u8..30, 0..20), extra in 0u8..60) {
            // Threshold 2 on a one-criterion concept keeps the card premature.
            let mut spec = mood();
            spec.concepts.iter_mut().find(|c| c.concept_id == "anxiety").unwrap().threshold = 2;
            let mut maker = CardMaker::default();
            let notes: Vec<RefinedNote> = tags.iter().map(|t| refined("worry", &t.to_string())).collect();
            maker.update_premature_cards(&notes, &spec);
            let score = |m: &CardMaker| m.premature().find(|c| c.concept_id == "anxiety").map_or(0, |c| c.dimensions[&1].score);
            let before = score(&maker);
            prop_assert!(maker.update_premature_cards(&[refined("worry", &extra.to_string())], &spec).is_empty());
            prop_assert!(score(&maker) >= before);
            prop_assert!(score(&maker) >= 1);
        }
    }
}
