//! Corpus ingestion into an append-only text store.
//!
//! Documents get a content-derived id over (text, source uri, timestamp), so
//! ingesting the same record twice is a no-op. Subjects can be pseudonymized
//! with a keyed hash before anything reaches the store.

mod mask;
mod store;

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::ids::name_uuid;
use crate::time::{parse_instant, Instant};

pub use mask::{mask_subjects, Masker, MIN_KEY_LEN};
pub use store::{DocFilter, IndexEntry, TextStore};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read corpus {path}: {source}")]
    Source {
        path: String,
        source: std::io::Error,
    },
    #[error("mask key must be at least {MIN_KEY_LEN} bytes, got {0}")]
    KeyTooShort(usize),
    #[error("unknown document `{0}`")]
    UnknownDocument(String),
    #[error(transparent)]
    Store(#[from] crate::jsonl::JsonlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatTag {
    Plain,
    JsonlRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceMeta {
    pub source_uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<Instant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub place: Option<String>,
    #[serde(default)]
    pub subjects: Vec<String>,
    pub format_tag: FormatTag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub meta: SourceMeta,
    pub ingested_at: Instant,
    /// Set once subjects have been pseudonymized.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub masked: bool,
}

/// NFC with LF line endings.
pub fn normalize_text(text: &str) -> String {
    let unified = text.replace("\r\n", "\n").replace('\r', "\n");
    unified.nfc().collect()
}

pub fn document_id(text: &str, source_uri: &str, timestamp: Option<Instant>) -> String {
    let ts = timestamp.map(|t| t.to_rfc3339()).unwrap_or_default();
    name_uuid("document", &[text.as_bytes(), source_uri.as_bytes(), ts.as_bytes()])
}

impl Document {
    pub fn new(text: &str, meta: SourceMeta, ingested_at: Instant) -> Self {
        let text = normalize_text(text);
        let doc_id = document_id(&text, &meta.source_uri, meta.timestamp);
        Document {
            doc_id,
            text,
            meta,
            ingested_at,
            masked: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestConfig {
    /// Recorded as `ingested_at`.
    pub now: Option<Instant>,
    pub masker: Option<Masker>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    /// Well-formed records, including ones already in the store.
    pub accepted: usize,
    pub rejected: usize,
    /// Documents actually appended.
    pub new_documents: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejections: Vec<String>,
}

impl IngestSummary {
    fn absorb(&mut self, other: IngestSummary) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.new_documents += other.new_documents;
        self.rejections.extend(other.rejections);
    }
}

#[derive(Debug, Deserialize)]
struct CorpusRecord {
    text: String,
    source_uri: String,
    #[serde(default)]
    timestamp: Option<String>,
    #[serde(default)]
    place: Option<String>,
    #[serde(default)]
    subjects: Vec<String>,
}

fn parse_record(line: &str) -> Result<SourceMetaAndText, String> {
    let record: CorpusRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if record.source_uri.trim().is_empty() {
        return Err("empty source_uri".into());
    }
    if record.text.trim().is_empty() {
        return Err("empty text".into());
    }
    let timestamp = record
        .timestamp
        .as_deref()
        .map(parse_instant)
        .transpose()
        .map_err(|e| e.to_string())?;
    Ok(SourceMetaAndText {
        text: record.text,
        meta: SourceMeta {
            source_uri: record.source_uri,
            timestamp,
            place: record.place.filter(|p| !p.trim().is_empty()),
            subjects: record.subjects,
            format_tag: FormatTag::JsonlRecord,
        },
    })
}

struct SourceMetaAndText {
    text: String,
    meta: SourceMeta,
}

fn finish(record: SourceMetaAndText, config: &IngestConfig, now: Instant) -> Result<Document, IngestError> {
    let doc = Document::new(&record.text, record.meta, now);
    match &config.masker {
        Some(masker) => Ok(masker.mask(&doc)),
        None => Ok(doc),
    }
}

/// Ingests a JSON Lines record stream. Malformed records are counted and
/// skipped; they never abort the run.
pub fn ingest_records<R: BufRead>(
    reader: R,
    label: &str,
    config: &IngestConfig,
    store: &mut TextStore,
) -> Result<IngestSummary, IngestError> {
    let now = config.now.unwrap_or_else(chrono::Utc::now);
    let mut summary = IngestSummary::default();
    let mut batch = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| IngestError::Source {
            path: label.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line) {
            Ok(record) => {
                summary.accepted += 1;
                batch.push(finish(record, config, now)?);
            }
            Err(reason) => {
                summary.rejected += 1;
                summary.rejections.push(format!("{label}:{}: {reason}", i + 1));
            }
        }
    }
    summary.new_documents = store.append(batch)?.len();
    Ok(summary)
}

/// Ingests a corpus file: `.jsonl`/`.json` files are record streams, anything
/// else is one plain-text document.
pub fn ingest_corpus(path: &Path, config: &IngestConfig, store: &mut TextStore) -> Result<IngestSummary, IngestError> {
    let label = path.display().to_string();
    let source_err = |source| IngestError::Source {
        path: label.clone(),
        source,
    };
    let is_jsonl = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl" | "json" | "ndjson")
    );
    if is_jsonl {
        let file = std::fs::File::open(path).map_err(source_err)?;
        return ingest_records(std::io::BufReader::new(file), &label, config, store);
    }
    let text = std::fs::read_to_string(path).map_err(source_err)?;
    let mut summary = IngestSummary::default();
    if text.trim().is_empty() {
        summary.rejected = 1;
        summary.rejections.push(format!("{label}: empty text"));
        return Ok(summary);
    }
    let now = config.now.unwrap_or_else(chrono::Utc::now);
    let record = SourceMetaAndText {
        text,
        meta: SourceMeta {
            source_uri: label,
            timestamp: None,
            place: None,
            subjects: Vec::new(),
            format_tag: FormatTag::Plain,
        },
    };
    summary.accepted = 1;
    summary.new_documents = store.append(vec![finish(record, config, now)?])?.len();
    Ok(summary)
}

pub fn ingest_all<'a>(
    paths: impl IntoIterator<Item = &'a Path>,
    config: &IngestConfig,
    store: &mut TextStore,
) -> Result<IngestSummary, IngestError> {
    let mut total = IngestSummary::default();
    for path in paths {
        total.absorb(ingest_corpus(path, config, store)?);
    }
    Ok(total)
}

/// Subject aliases to mask inside document text, keyed by subject id.
pub type SubjectAliases = BTreeMap<String, Vec<String>>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::parse_instant;

    const THREE: &str = r#"{"text": "A drank beer.", "source_uri": "diary/1", "timestamp": "2020-01-01T10:00:00Z", "subjects": ["A"]}
{"text": "A drank two beers.", "source_uri": "diary/2", "timestamp": "2020-01-02T10:00:00"}

{"text": "B bought wine.", "source_uri": "diary/3", "place": "party"}
"#;

    fn config() -> IngestConfig {
        IngestConfig {
            now: Some(parse_instant("2020-02-01T00:00:00Z").unwrap()),
            masker: None,
        }
    }

    #[test]
    fn three_good_records() {
        let mut store = TextStore::in_memory();
        let s = ingest_records(THREE.as_bytes(), "mem", &config(), &mut store).unwrap();
        assert_eq!((s.accepted, s.rejected, s.new_documents), (3, 0, 3));
        assert_eq!(store.len(), 3);
    }

    #[test]
    fn reingest_is_a_no_op() {
        let mut store = TextStore::in_memory();
        ingest_records(THREE.as_bytes(), "mem", &config(), &mut store).unwrap();
        let again = ingest_records(THREE.as_bytes(), "mem", &config(), &mut store).unwrap();
        assert_eq!((again.accepted, again.new_documents), (3, 0));
        assert_eq!(store.len(), 3);
    }

    #[test]
    fn record_without_text_is_rejected_not_fatal() {
        let input = r#"{"text": "one", "source_uri": "u1"}
{"source_uri": "u2"}
{"text": "three", "source_uri": "u3"}
not json at all
"#;
        let mut store = TextStore::in_memory();
        let s = ingest_records(input.as_bytes(), "mem", &config(), &mut store).unwrap();
        assert_eq!((s.accepted, s.rejected), (2, 2));
        assert_eq!(s.rejections.len(), 2);
        assert!(s.rejections[0].starts_with("mem:2:"));
    }

    #[test]
    fn doc_id_is_a_function_of_the_triple() {
        let t = parse_instant("2020-01-01T00:00:00Z").ok();
        let a = document_id("x", "u", t);
        assert_eq!(a, document_id("x", "u", t));
        assert_ne!(a, document_id("x", "u", None));
        assert_ne!(a, document_id("x", "v", t));
        assert_ne!(a, document_id("y", "u", t));
    }

    #[test]
    fn text_is_nfc_with_lf() {
        let decomposed = "cafe\u{301}\r\nbar\rbaz";
        assert_eq!(normalize_text(decomposed), "caf\u{e9}\nbar\nbaz");
        let doc = Document::new(decomposed, SourceMeta {
            source_uri: "u".into(),
            timestamp: None,
            place: None,
            subjects: vec![],
            format_tag: FormatTag::Plain,
        }, parse_instant("2020-01-01").unwrap());
        assert_eq!(doc.doc_id, document_id("caf\u{e9}\nbar\nbaz", "u", None));
    }

    #[test]
    fn plain_text_files_become_one_document() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("note.txt");
        std::fs::write(&path, "A drank beer.\r\nThen slept.").unwrap();
        let mut store = TextStore::in_memory();
        let s = ingest_corpus(&path, &config(), &mut store).unwrap();
        assert_eq!(s.new_documents, 1);
        let doc = &store.list_documents(&DocFilter::default())[0];
        assert_eq!(doc.meta.format_tag, FormatTag::Plain);
        assert_eq!(doc.text, "A drank beer.\nThen slept.");
    }

    #[test]
    fn missing_corpus_is_an_error() {
        let mut store = TextStore::in_memory();
        let err = ingest_corpus(Path::new("/nonexistent/corpus.jsonl"), &config(), &mut store);
        assert!(matches!(err, Err(IngestError::Source { .. })));
    }
}
