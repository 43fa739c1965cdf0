use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Document, IngestError};
use crate::jsonl;
use crate::time::TimeRange;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub doc_id: String,
    pub file: String,
    pub offset: u64,
}

#[derive(Debug, Clone, Default)]
pub struct DocFilter {
    /// Half-open; undated documents never match a time filter.
    pub time: Option<TimeRange>,
    pub source_prefix: Option<String>,
}

impl DocFilter {
    pub fn accepts(&self, doc: &Document) -> bool {
        if let Some(range) = &self.time {
            match doc.meta.timestamp {
                Some(t) if range.contains(t) => {}
                _ => return false,
            }
        }
        self.source_prefix
            .as_deref()
            .is_none_or(|p| doc.meta.source_uri.starts_with(p))
    }
}

/// Append-only document store: one JSON Lines file per ingest run plus an
/// index of `doc_id -> (file, offset)` in ingestion order.
#[derive(Debug)]
pub struct TextStore {
    dir: Option<PathBuf>,
    index: Vec<IndexEntry>,
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

const INDEX_FILE: &str = "index.json";

impl TextStore {
    pub fn in_memory() -> Self {
        TextStore {
            dir: None,
            index: Vec::new(),
            docs: Vec::new(),
            by_id: HashMap::new(),
        }
    }

    pub fn open(dir: &Path) -> Result<Self, IngestError> {
        let index: Vec<IndexEntry> = jsonl::read_json(&dir.join(INDEX_FILE))?.unwrap_or_default();
        let mut files: Vec<&str> = index.iter().map(|e| e.file.as_str()).collect();
        files.dedup();
        let mut loaded: HashMap<String, Document> = HashMap::new();
        for file in files {
            for doc in jsonl::read_all::<Document>(&dir.join(file))? {
                loaded.insert(doc.doc_id.clone(), doc);
            }
        }
        let mut store = TextStore {
            dir: Some(dir.to_path_buf()),
            index: Vec::new(),
            docs: Vec::new(),
            by_id: HashMap::new(),
        };
        for entry in index {
            let doc = loaded
                .remove(&entry.doc_id)
                .ok_or_else(|| IngestError::UnknownDocument(entry.doc_id.clone()))?;
            store.by_id.insert(entry.doc_id.clone(), store.docs.len());
            store.docs.push(doc);
            store.index.push(entry);
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.by_id.contains_key(doc_id)
    }

    pub fn index(&self) -> &[IndexEntry] {
        &self.index
    }

    /// Appends documents not already present, as a new run file. Returns the
    /// ids actually added.
    pub fn append(&mut self, docs: Vec<Document>) -> Result<Vec<String>, IngestError> {
        let mut fresh = Vec::new();
        for doc in docs {
            if !self.by_id.contains_key(&doc.doc_id) && !fresh.iter().any(|d: &Document| d.doc_id == doc.doc_id) {
                fresh.push(doc);
            }
        }
        if fresh.is_empty() {
            return Ok(Vec::new());
        }
        let run = self.index.iter().map(|e| e.file.as_str()).collect::<std::collections::BTreeSet<_>>().len() + 1;
        let file = format!("run-{run:04}.jsonl");
        let offsets = match &self.dir {
            Some(dir) => jsonl::append(&dir.join(&file), &fresh)?,
            None => vec![0; fresh.len()],
        };
        let mut ids = Vec::with_capacity(fresh.len());
        for (doc, offset) in fresh.into_iter().zip(offsets) {
            ids.push(doc.doc_id.clone());
            self.index.push(IndexEntry {
                doc_id: doc.doc_id.clone(),
                file: file.clone(),
                offset,
            });
            self.by_id.insert(doc.doc_id.clone(), self.docs.len());
            self.docs.push(doc);
        }
        if let Some(dir) = &self.dir {
            jsonl::write_json(&dir.join(INDEX_FILE), &self.index)?;
        }
        Ok(ids)
    }

    pub fn get_document(&self, doc_id: &str) -> Result<&Document, IngestError> {
        self.by_id
            .get(doc_id)
            .map(|&i| &self.docs[i])
            .ok_or_else(|| IngestError::UnknownDocument(doc_id.to_string()))
    }

    /// Documents in ingestion order.
    pub fn list_documents(&self, filter: &DocFilter) -> Vec<&Document> {
        self.docs.iter().filter(|d| filter.accepts(d)).collect()
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }
}
