//! Deterministic gazetteer annotation.
//!
//! Documents are split into sentences, tokenized, and matched against the
//! ontology dictionary: case-insensitive, greedy longest match, left to right,
//! over contiguous token runs. Morphological variants match only if they are
//! listed; negation is not modeled.

mod tokenize;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::ingest::Document;
use crate::ontology::{Kind, OntologySpec, ValueKind};
use crate::time::Instant;
use crate::values::{Amount, AttrValue};

pub use tokenize::{fold_phrase, parse_number, tokenize, Token};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    /// Half-open character span into the document text.
    pub span: (usize, usize),
    pub surface: String,
    pub canonical_id: String,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, AttrValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedChunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub sentence_index: usize,
    pub subject: String,
    /// `None` for undated documents.
    pub time: Option<Instant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub place: Option<String>,
    pub annotations: Vec<Annotation>,
    /// This chunk's id plus the ids of duplicates folded into it.
    pub provenance: Vec<String>,
}

impl AnnotatedChunk {
    pub fn has(&self, kind: Kind, canonical_id: &str) -> bool {
        self.annotations
            .iter()
            .any(|a| a.kind == kind && a.canonical_id == canonical_id)
    }

    /// Sorted `(canonical_id, kind)` multiset used for duplicate detection.
    pub fn signature(&self) -> Vec<(&str, Kind)> {
        let mut sig: Vec<_> = self
            .annotations
            .iter()
            .map(|a| (a.canonical_id.as_str(), a.kind))
            .collect();
        sig.sort();
        sig
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotateReport {
    pub chunks_emitted: usize,
    pub chunks_skipped: usize,
}

impl std::ops::AddAssign for AnnotateReport {
    fn add_assign(&mut self, rhs: Self) {
        self.chunks_emitted += rhs.chunks_emitted;
        self.chunks_skipped += rhs.chunks_skipped;
    }
}

/// Anything that can turn a document into annotated chunks.
pub trait Annotator {
    fn annotate(&self, doc: &Document) -> (Vec<AnnotatedChunk>, AnnotateReport);
}

#[derive(Debug, Default)]
struct TrieNode {
    children: HashMap<String, usize>,
    /// Dictionary entry terminating here, if any.
    entry: Option<usize>,
}

#[derive(Debug)]
struct Entry {
    canonical_id: String,
    kind: Kind,
    person: bool,
    fixed: BTreeMap<String, AttrValue>,
    /// Attribute (name, unit) a preceding numeral fills in.
    numeric: Option<(String, Option<String>)>,
}

/// Token trie over the folded dictionary.
#[derive(Debug)]
pub struct Gazetteer {
    nodes: Vec<TrieNode>,
    entries: Vec<Entry>,
}

impl Gazetteer {
    pub fn new(spec: &OntologySpec) -> Self {
        let mut g = Gazetteer {
            nodes: vec![TrieNode::default()],
            entries: Vec::new(),
        };
        // Dictionary order is (kind, surface, id), so for a surface listed as
        // both kinds the entity entry is inserted first and kept.
        for entry in &spec.dictionary {
            let class = spec
                .class(entry.kind, &entry.canonical_id)
                .expect("loaded spec resolves dictionary classes");
            let fixed = entry
                .attributes
                .iter()
                .map(|(name, value)| {
                    let kind = class.attribute(name).map(|a| a.kind);
                    let v = match kind {
                        Some(ValueKind::Text) => AttrValue::Text(value.clone()),
                        _ => AttrValue::Category(value.clone()),
                    };
                    (name.clone(), v)
                })
                .collect();
            let numeric = (entry.kind == Kind::Entity)
                .then(|| class.first_numeric_attribute())
                .flatten()
                .map(|a| (a.name.clone(), a.unit.clone()));
            let id = g.entries.len();
            g.entries.push(Entry {
                canonical_id: entry.canonical_id.clone(),
                kind: entry.kind,
                person: entry.kind == Kind::Entity && class.person,
                fixed,
                numeric,
            });
            let mut node = 0;
            for word in entry.surface_form.split(' ') {
                node = match g.nodes[node].children.get(word) {
                    Some(&next) => next,
                    None => {
                        let next = g.nodes.len();
                        g.nodes.push(TrieNode::default());
                        g.nodes[node].children.insert(word.to_string(), next);
                        next
                    }
                };
            }
            if g.nodes[node].entry.is_none() {
                g.nodes[node].entry = Some(id);
            }
        }
        g
    }

    /// Longest match starting at `tokens[0]`: (token count, entry index).
    fn longest_at(&self, folded: &[String]) -> Option<(usize, usize)> {
        let mut node = 0;
        let mut best = None;
        for (k, word) in folded.iter().enumerate() {
            match self.nodes[node].children.get(word) {
                Some(&next) => node = next,
                None => break,
            }
            if let Some(entry) = self.nodes[node].entry {
                best = Some((k + 1, entry));
            }
        }
        best
    }

    /// Greedy leftmost-longest matching over one sentence. Returns
    /// `(token start, token end, entry)` triples.
    pub fn match_tokens(&self, tokens: &[Token]) -> Vec<(usize, usize, usize)> {
        let folded: Vec<String> = tokens.iter().map(Token::folded).collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < folded.len() {
            match self.longest_at(&folded[i..]) {
                Some((len, entry)) => {
                    out.push((i, i + len, entry));
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }

    fn annotations(&self, text_chars: &[char], tokens: &[Token]) -> (Vec<Annotation>, Vec<bool>) {
        let mut annotations = Vec::new();
        let mut persons = Vec::new();
        for (lo, hi, entry_idx) in self.match_tokens(tokens) {
            let entry = &self.entries[entry_idx];
            let span = (tokens[lo].start, tokens[hi - 1].end);
            let mut attributes = entry.fixed.clone();
            if let (Some((name, unit)), Some(prev)) = (&entry.numeric, lo.checked_sub(1)) {
                if let Some(value) = parse_number(&tokens[prev].text) {
                    attributes.insert(name.clone(), AttrValue::Amount(Amount::new(value, unit.as_deref())));
                }
            }
            annotations.push(Annotation {
                span,
                surface: text_chars[span.0..span.1].iter().collect(),
                canonical_id: entry.canonical_id.clone(),
                kind: entry.kind,
                attributes,
            });
            persons.push(entry.person);
        }
        (annotations, persons)
    }
}

/// Splits a token stream into sentences: a `.`, `!` or `?` token followed by
/// whitespace or end of text closes a sentence.
pub fn split_sentences<'t>(text_chars: &[char], tokens: &'t [Token]) -> Vec<&'t [Token]> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, tok) in tokens.iter().enumerate() {
        let at_break = tok.is_sentence_end() && text_chars.get(tok.end).is_none_or(|c| c.is_whitespace());
        if at_break {
            out.push(&tokens[start..=i]);
            start = i + 1;
        }
    }
    if start < tokens.len() {
        out.push(&tokens[start..]);
    }
    out
}

pub fn chunk_id(doc_id: &str, sentence_index: usize) -> String {
    format!("{doc_id}/{sentence_index}")
}

#[derive(Debug)]
pub struct GazetteerAnnotator {
    gazetteer: Gazetteer,
}

impl GazetteerAnnotator {
    pub fn new(spec: &OntologySpec) -> Self {
        GazetteerAnnotator {
            gazetteer: Gazetteer::new(spec),
        }
    }
}

impl Annotator for GazetteerAnnotator {
    fn annotate(&self, doc: &Document) -> (Vec<AnnotatedChunk>, AnnotateReport) {
        let chars: Vec<char> = doc.text.chars().collect();
        let tokens = tokenize(&doc.text);
        let mut chunks = Vec::new();
        let mut report = AnnotateReport::default();
        for (sentence_index, sentence) in split_sentences(&chars, &tokens).into_iter().enumerate() {
            let (annotations, persons) = self.gazetteer.annotations(&chars, sentence);
            let subject = match doc.meta.subjects.first() {
                Some(s) => Some(s.clone()),
                None => {
                    let mut mentioned: Vec<String> = annotations
                        .iter()
                        .zip(&persons)
                        .filter(|(_, p)| **p)
                        .map(|(a, _)| fold_phrase(&a.surface))
                        .collect();
                    mentioned.sort();
                    mentioned.dedup();
                    (mentioned.len() == 1).then(|| mentioned.remove(0))
                }
            };
            let Some(subject) = subject else {
                report.chunks_skipped += 1;
                continue;
            };
            let id = chunk_id(&doc.doc_id, sentence_index);
            chunks.push(AnnotatedChunk {
                chunk_id: id.clone(),
                doc_id: doc.doc_id.clone(),
                sentence_index,
                subject,
                time: doc.meta.timestamp,
                place: doc.meta.place.clone(),
                annotations,
                provenance: vec![id],
            });
            report.chunks_emitted += 1;
        }
        (chunks, report)
    }
}

/// One-shot convenience over [`GazetteerAnnotator`].
pub fn annotate_document(doc: &Document, spec: &OntologySpec) -> (Vec<AnnotatedChunk>, AnnotateReport) {
    GazetteerAnnotator::new(spec).annotate(doc)
}
