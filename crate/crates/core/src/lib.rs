//! Ontology-driven pipeline from free text to criterion cards.
//!
//! Documents are ingested into an append-only store, annotated against a
//! gazetteer, grouped into time windows, synthesized into behavior notes,
//! reconciled by refinement rules, scored into criterion cards, and exported
//! as a graph.

pub mod annotate;
pub mod cards;
pub mod graph;
pub mod ids;
pub mod ingest;
pub mod jsonl;
pub mod notes;
pub mod ontology;
pub mod organize;
pub mod pipeline;
pub mod refine;
pub mod time;
pub mod values;
