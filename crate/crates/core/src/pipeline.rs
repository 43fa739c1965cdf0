//! End-to-end orchestration over an on-disk store: ingest, annotate,
//! organize, synthesize, validate, refine, score and commit.
//!
//! Layout under the store root:
//!
//! ```text
//! text/       run-NNNN.jsonl, index.json
//! organize/   chunks.jsonl, groups.jsonl, state.json
//! notes/      notes.jsonl, rejected.jsonl, state.json
//! refined/    refined.jsonl
//! cards/      log.jsonl, index.json, premature.json
//! .lock
//! ```

use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{annotate_document, AnnotatedChunk};
use crate::cards::{process, Card, CardDb, CardError, CardMaker, CardStatus};
use crate::ingest::{ingest_all, Document, IngestConfig, IngestError, Masker, TextStore};
use crate::jsonl::{self, JsonlError};
use crate::notes::{chunk_document, Note, SynthesisConfig, Synthesizer};
use crate::ontology::OntologySpec;
use crate::organize::{ChunkGroup, OrganizeConfig, OrganizeError, Organizer};
use crate::refine::{refine_notes, NoteValidator, RefineError, RefinedNote, Rejection, Verdict};
use crate::time::Instant;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("store {0} is locked by another run (remove .lock if no run is active)")]
    Locked(PathBuf),
    #[error("cannot prepare store {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Organize(#[from] OrganizeError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Cards(#[from] CardError),
    #[error(transparent)]
    Store(#[from] JsonlError),
    #[error("unknown card `{0}`")]
    UnknownCard(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Exclusive lock on a store root, released on drop.
#[derive(Debug)]
pub struct StoreLock {
    path: PathBuf,
}

impl StoreLock {
    pub fn acquire(root: &Path) -> Result<Self> {
        let path = root.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(StoreLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(root.to_path_buf())),
            Err(source) => Err(PipelineError::Io { path, source }),
        }
    }
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineConfig {
    pub organize: OrganizeConfig,
    /// Its `window` is overwritten by `organize.window` at run time.
    pub synthesis: SynthesisConfig,
    pub masker: Option<Masker>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub documents_ingested: usize,
    pub documents_rejected: usize,
    pub chunks_emitted: usize,
    pub chunks_skipped: usize,
    pub groups_released: usize,
    pub notes_synthesized: usize,
    pub notes_refined: usize,
    pub notes_rejected: usize,
    pub cards_premature: usize,
    pub cards_committed: usize,
    pub cards_expired: usize,
    pub cards_blocked: usize,
    pub conflicts_detected: usize,
    pub conflicts_resolved: usize,
    /// Measured, never stored, and left out of JSON so summaries of
    /// identical runs stay identical.
    #[serde(skip)]
    pub wall_time_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedNote {
    pub note: Note,
    pub rejection: Rejection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct OrganizeState {
    organizer: Option<Organizer>,
    /// Documents already annotated.
    annotated: BTreeSet<String>,
}

fn dir(root: &Path, sub: &str) -> Result<PathBuf> {
    let path = root.join(sub);
    fs::create_dir_all(&path).map_err(|source| PipelineError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Everything persisted under a store root, loaded read-only.
#[derive(Debug)]
pub struct Store {
    pub root: PathBuf,
    pub text: TextStore,
    pub chunks: Vec<AnnotatedChunk>,
    pub notes: Vec<Note>,
    pub rejected: Vec<RejectedNote>,
    pub refined: Vec<RefinedNote>,
    pub cards: CardDb,
    pub maker: CardMaker,
}

impl Store {
    /// Opens (creating directories as needed) the store at `root`.
    pub fn open(root: &Path) -> Result<Self> {
        let organize = dir(root, "organize")?;
        let notes = dir(root, "notes")?;
        Ok(Store {
            root: root.to_path_buf(),
            text: TextStore::open(&dir(root, "text")?)?,
            chunks: jsonl::read_all(&organize.join("chunks.jsonl"))?,
            notes: jsonl::read_all(&notes.join("notes.jsonl"))?,
            rejected: jsonl::read_all(&notes.join("rejected.jsonl"))?,
            refined: jsonl::read_all(&dir(root, "refined")?.join("refined.jsonl"))?,
            maker: jsonl::read_json(&dir(root, "cards")?.join("premature.json"))?.unwrap_or_default(),
            cards: CardDb::open(&root.join("cards"))?,
        })
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&AnnotatedChunk> {
        self.chunks.iter().find(|c| c.chunk_id == chunk_id)
    }

    pub fn note(&self, note_id: &str) -> Option<&Note> {
        self.notes.iter().find(|n| n.note_id == note_id)
    }

    pub fn refined_note(&self, refined_id: &str) -> Option<&RefinedNote> {
        self.refined.iter().find(|r| r.refined_id == refined_id)
    }

    /// Full drill-down from a card to its source documents.
    pub fn trace_card(&self, card_id: &str) -> Result<CardTrace> {
        let card = self
            .cards
            .get(card_id)
            .cloned()
            .ok_or_else(|| PipelineError::UnknownCard(card_id.to_string()))?;
        let mut trace = CardTrace {
            card,
            refined: Vec::new(),
            dangling: Vec::new(),
        };
        for id in trace.card.evidence_ids() {
            let Some(refined) = self.refined_note(id) else {
                trace.dangling.push(format!("refined note {id}"));
                continue;
            };
            let mut rt = RefinedTrace {
                refined: refined.clone(),
                notes: Vec::new(),
            };
            for note_id in &refined.sources {
                let Some(note) = self.note(note_id) else {
                    trace.dangling.push(format!("note {note_id}"));
                    continue;
                };
                let mut nt = NoteTrace {
                    note: note.clone(),
                    chunks: Vec::new(),
                };
                for chunk_id in &note.provenance {
                    let Some(chunk) = self.chunk(chunk_id) else {
                        trace.dangling.push(format!("chunk {chunk_id}"));
                        continue;
                    };
                    match self.text.get_document(chunk_document(chunk_id)) {
                        Ok(doc) => nt.chunks.push(ChunkTrace {
                            chunk: chunk.clone(),
                            document: doc.clone(),
                        }),
                        Err(_) => trace.dangling.push(format!("document {}", chunk_document(chunk_id))),
                    }
                }
                rt.notes.push(nt);
            }
            trace.refined.push(rt);
        }
        Ok(trace)
    }

    /// Dangling references over every committed card's chain; empty when
    /// everything resolves.
    pub fn audit_traceability(&self) -> Vec<String> {
        let ids: Vec<String> = self.cards.committed().map(|c| c.card_id.clone()).collect();
        ids.iter()
            .flat_map(|id| {
                let trace = self.trace_card(id).expect("committed cards exist");
                trace.dangling.into_iter().map(move |d| format!("{id}: {d}"))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChunkTrace {
    pub chunk: AnnotatedChunk,
    pub document: Document,
}

#[derive(Debug, Clone, Serialize)]
pub struct NoteTrace {
    pub note: Note,
    pub chunks: Vec<ChunkTrace>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinedTrace {
    pub refined: RefinedNote,
    pub notes: Vec<NoteTrace>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CardTrace {
    pub card: Card,
    pub refined: Vec<RefinedTrace>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub dangling: Vec<String>,
}

impl CardTrace {
    pub fn document_ids(&self) -> BTreeSet<&str> {
        self.refined
            .iter()
            .flat_map(|r| &r.notes)
            .flat_map(|n| &n.chunks)
            .map(|c| c.document.doc_id.as_str())
            .collect()
    }
}

/// Ingests `corpora` into the store without running later stages.
pub fn ingest_only(root: &Path, corpora: &[PathBuf], config: &PipelineConfig, now: Instant) -> Result<RunSummary> {
    let started = std::time::Instant::now();
    let _lock = StoreLock::acquire(&dir(root, "")?)?;
    let mut text = TextStore::open(&dir(root, "text")?)?;
    let ingest = IngestConfig {
        now: Some(now),
        masker: config.masker.clone(),
    };
    let summary = ingest_all(corpora.iter().map(PathBuf::as_path), &ingest, &mut text)?;
    Ok(RunSummary {
        documents_ingested: summary.new_documents,
        documents_rejected: summary.rejected,
        wall_time_ms: started.elapsed().as_millis(),
        ..RunSummary::default()
    })
}

/// One full pipeline pass at clock `now`.
pub fn run(
    root: &Path,
    spec: &OntologySpec,
    corpora: &[PathBuf],
    config: &PipelineConfig,
    now: Instant,
) -> Result<RunSummary> {
    let started = std::time::Instant::now();
    let _lock = StoreLock::acquire(&dir(root, "")?)?;
    let mut summary = RunSummary::default();
    let mut synthesis = config.synthesis.clone();
    synthesis.window = config.organize.window;

    // Ingest.
    let mut text = TextStore::open(&dir(root, "text")?)?;
    let ingest = IngestConfig {
        now: Some(now),
        masker: config.masker.clone(),
    };
    let ingested = ingest_all(corpora.iter().map(PathBuf::as_path), &ingest, &mut text)?;
    summary.documents_ingested = ingested.new_documents;
    summary.documents_rejected = ingested.rejected;

    // Annotate documents not seen before, then organize.
    let organize_dir = dir(root, "organize")?;
    let state_path = organize_dir.join("state.json");
    let mut state: OrganizeState = jsonl::read_json(&state_path)?.unwrap_or_default();
    let mut organizer = state.organizer.take().unwrap_or_else(|| Organizer::new(config.organize));
    organizer.config = config.organize;
    let mut fresh_chunks = Vec::new();
    for doc in text.documents() {
        if state.annotated.insert(doc.doc_id.clone()) {
            let (chunks, report) = annotate_document(doc, spec);
            summary.chunks_emitted += report.chunks_emitted;
            summary.chunks_skipped += report.chunks_skipped;
            fresh_chunks.extend(chunks);
        }
    }
    jsonl::append(&organize_dir.join("chunks.jsonl"), &fresh_chunks)?;
    organizer.add(fresh_chunks);
    let groups: Vec<ChunkGroup> = organizer.close_window(now)?;
    summary.groups_released = groups.len();
    jsonl::append(&organize_dir.join("groups.jsonl"), &groups)?;
    state.organizer = Some(organizer);
    jsonl::write_json(&state_path, &state)?;

    // Synthesize and validate.
    let notes_dir = dir(root, "notes")?;
    let synth_path = notes_dir.join("state.json");
    let mut synthesizer: Synthesizer = jsonl::read_json(&synth_path)?.unwrap_or_default();
    synthesizer.accept(groups);
    let notes = synthesizer.synthesize(now, config.organize.watermark, spec, &synthesis);
    summary.notes_synthesized = notes.len();
    jsonl::write_json(&synth_path, &synthesizer)?;

    let known_chunks: BTreeSet<String> = jsonl::read_all::<AnnotatedChunk>(&organize_dir.join("chunks.jsonl"))?
        .into_iter()
        .map(|c| c.chunk_id)
        .collect();
    let stored_notes: Vec<Note> = jsonl::read_all(&notes_dir.join("notes.jsonl"))?;
    let mut validator = NoteValidator::with_seen(stored_notes.into_iter().map(|n| n.note_id));
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for note in notes {
        match validator.validate_note(&note, |c| known_chunks.contains(c)) {
            Verdict::Accepted => accepted.push(note),
            Verdict::Rejected(rejection) => rejected.push(RejectedNote { note, rejection }),
        }
    }
    summary.notes_rejected = rejected.len();
    jsonl::append(&notes_dir.join("notes.jsonl"), &accepted)?;
    jsonl::append(&notes_dir.join("rejected.jsonl"), &rejected)?;

    // Refine.
    let refined = refine_notes(&accepted, spec)?;
    summary.notes_refined = refined.len();
    jsonl::append(&dir(root, "refined")?.join("refined.jsonl"), &refined)?;

    // Cards.
    let cards_dir = dir(root, "cards")?;
    let maker_path = cards_dir.join("premature.json");
    let mut maker: CardMaker = jsonl::read_json(&maker_path)?.unwrap_or_default();
    let ready = maker.update_premature_cards(&refined, spec);
    jsonl::write_json(&maker_path, &maker)?;
    let mut db = CardDb::open(&cards_dir)?;
    let report = process(&mut db, ready, spec, now)?;
    summary.cards_premature = db.cards().filter(|c| c.status == CardStatus::Premature).count() + maker.premature_count();
    summary.cards_committed = report.committed.len();
    summary.cards_expired = report.expired.len();
    summary.cards_blocked = report.blocked.len();
    summary.conflicts_detected = report.conflicts.len();
    summary.conflicts_resolved = report.resolved;
    summary.wall_time_ms = started.elapsed().as_millis();
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::tests::drinking;
    use crate::time::parse_instant;
    use std::io::Write;

    fn corpus(dir: &Path) -> PathBuf {
        let path = dir.join("corpus.jsonl");
        let mut f = fs::File::create(&path).unwrap();
        for (i, day) in ["2020-01-27", "2020-01-29", "2020-01-31", "2020-02-03", "2020-02-05"].iter().enumerate() {
            writeln!(
                f,
                r#"{{"text": "A drank 2 beers.", "source_uri": "diary/{i}", "timestamp": "{day}T20:00:00Z", "subjects": ["A"]}}"#
            )
            .unwrap();
        }
        writeln!(f, "not json").unwrap();
        path
    }

    #[test]
    fn run_is_idempotent_and_traceable() {
        let tmp = tempfile::tempdir().unwrap();
        let store = tmp.path().join("store");
        let corpus = corpus(tmp.path());
        let now = parse_instant("2020-03-01").unwrap();
        let spec = drinking();
        let first = run(&store, &spec, std::slice::from_ref(&corpus), &PipelineConfig::default(), now).unwrap();
        assert_eq!(first.documents_ingested, 5);
        assert_eq!(first.documents_rejected, 1);
        assert!(first.notes_synthesized >= 1);
        assert_eq!(first.notes_rejected, 0);

        let second = run(&store, &spec, &[corpus], &PipelineConfig::default(), now).unwrap();
        assert_eq!(second.documents_ingested, 0);
        assert_eq!(second.notes_synthesized, 0);

        let loaded = Store::open(&store).unwrap();
        assert_eq!(loaded.text.len(), 5);
        assert_eq!(loaded.notes.len(), first.notes_synthesized);
        assert!(loaded.audit_traceability().is_empty());
        assert!(!store.join(".lock").exists());
    }

    #[test]
    fn lock_is_exclusive() {
        let tmp = tempfile::tempdir().unwrap();
        let held = StoreLock::acquire(tmp.path()).unwrap();
        assert!(matches!(StoreLock::acquire(tmp.path()), Err(PipelineError::Locked(_))));
        drop(held);
        StoreLock::acquire(tmp.path()).unwrap();
    }

    #[test]
    fn unknown_card_trace_fails() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        assert!(matches!(store.trace_card("x@y#1"), Err(PipelineError::UnknownCard(_))));
    }
}
