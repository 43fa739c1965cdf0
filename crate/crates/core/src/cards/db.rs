use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Card, CardError, CardStatus, ReasoningEvent};
use crate::jsonl;

/// One line of the Card DB log.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Event { card_id: String, event: ReasoningEvent },
    Snapshot { card: Card },
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum RecordBody {
    Event { card_id: String, event: ReasoningEvent },
    Snapshot { card: Card },
}

// Internally tagged enums buffer their content and then reject the integer
// keys of `Card::dimensions`, so the tag is split off by hand.
impl<'de> Deserialize<'de> for LogRecord {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let mut value = serde_json::Value::deserialize(d)?;
        let tag = value
            .as_object_mut()
            .and_then(|m| m.remove("type"))
            .ok_or_else(|| D::Error::missing_field("type"))?;
        let body = serde_json::json!({ tag.as_str().unwrap_or_default(): value });
        Ok(match serde_json::from_value(body).map_err(D::Error::custom)? {
            RecordBody::Event { card_id, event } => LogRecord::Event { card_id, event },
            RecordBody::Snapshot { card } => LogRecord::Snapshot { card },
        })
    }
}

const LOG_FILE: &str = "log.jsonl";
const INDEX_FILE: &str = "index.json";

/// Event-sourced card store: an append-only log of reasoning events and card
/// snapshots, plus a materialized index of the latest snapshot per card.
#[derive(Debug, Default)]
pub struct CardDb {
    dir: Option<PathBuf>,
    log: Vec<LogRecord>,
    cards: BTreeMap<String, Card>,
}

/// Latest snapshot per card id.
pub fn replay(log: &[LogRecord]) -> BTreeMap<String, Card> {
    let mut cards = BTreeMap::new();
    for record in log {
        if let LogRecord::Snapshot { card } = record {
            cards.insert(card.card_id.clone(), card.clone());
        }
    }
    cards
}

fn render_index(cards: &BTreeMap<String, Card>) -> String {
    let mut text = serde_json::to_string_pretty(cards).expect("cards serialize");
    text.push('\n');
    text
}

impl CardDb {
    pub fn in_memory() -> Self {
        CardDb::default()
    }

    /// Opens a store directory, rebuilding state from the log. Fails if an
    /// existing index disagrees with the replay.
    pub fn open(dir: &Path) -> Result<Self, CardError> {
        let log: Vec<LogRecord> = jsonl::read_all(&dir.join(LOG_FILE))?;
        let cards = replay(&log);
        let index_path = dir.join(INDEX_FILE);
        if index_path.exists() {
            let on_disk = std::fs::read_to_string(&index_path).map_err(|source| {
                CardError::Store(jsonl::JsonlError::Io {
                    path: index_path.display().to_string(),
                    source,
                })
            })?;
            if on_disk != render_index(&cards) {
                return Err(CardError::IndexMismatch);
            }
        }
        Ok(CardDb {
            dir: Some(dir.to_path_buf()),
            log,
            cards,
        })
    }

    pub fn get(&self, card_id: &str) -> Option<&Card> {
        self.cards.get(card_id)
    }

    /// All cards in card-id order.
    pub fn cards(&self) -> impl Iterator<Item = &Card> {
        self.cards.values()
    }

    pub fn committed(&self) -> impl Iterator<Item = &Card> {
        self.cards.values().filter(|c| c.status == CardStatus::Committed)
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn index_text(&self) -> String {
        render_index(&self.cards)
    }

    /// Appends `events` for the card followed by its new snapshot. Only the
    /// manager calls this.
    pub(super) fn record(&mut self, card: &Card, events: &[ReasoningEvent]) -> Result<(), CardError> {
        let mut records: Vec<LogRecord> = events
            .iter()
            .map(|e| LogRecord::Event {
                card_id: card.card_id.clone(),
                event: e.clone(),
            })
            .collect();
        records.push(LogRecord::Snapshot { card: card.clone() });
        if let Some(dir) = &self.dir {
            jsonl::append(&dir.join(LOG_FILE), &records)?;
        }
        self.log.extend(records);
        self.cards.insert(card.card_id.clone(), card.clone());
        if let Some(dir) = &self.dir {
            // Same bytes as `render_index`.
            jsonl::write_json(&dir.join(INDEX_FILE), &self.cards)?;
        }
        Ok(())
    }
}
