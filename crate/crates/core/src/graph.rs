//! Read-only views over the Card DB: a derived card network, route
//! enumeration between nodes, DOT/JSON export and card queries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cards::{Card, CardDb, CardStatus};
use crate::time::TimeRange;

/// Default route length budget.
pub const DEFAULT_MAX_LENGTH: usize = 6;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("unknown export format `{0}` (expected dot or json)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Card,
    Subject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    SameSubject,
    Conflict,
    Supersedes,
    EvidenceShared,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::SameSubject => "same_subject",
            EdgeKind::Conflict => "conflict",
            EdgeKind::Supersedes => "supersedes",
            EdgeKind::EvidenceShared => "evidence_shared",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub kind: NodeKind,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GraphEdge {
    pub from: String,
    pub to: String,
    pub kind: EdgeKind,
}

/// Nodes sorted by id, edges sorted by (from, to, kind).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

#[derive(Debug, Clone, Default)]
pub struct GraphFilter {
    /// Empty means every subject.
    pub subjects: BTreeSet<String>,
    /// Empty means every concept.
    pub concepts: BTreeSet<String>,
    /// Keeps cards whose validity overlaps this range.
    pub time: Option<TimeRange>,
}

impl GraphFilter {
    pub fn accepts(&self, card: &Card) -> bool {
        (self.subjects.is_empty() || self.subjects.contains(&card.subject))
            && (self.concepts.is_empty() || self.concepts.contains(&card.concept_id))
            && self.time.is_none_or(|range| {
                let Some(start) = card.validity.start else {
                    return false;
                };
                start < range.end && card.validity.end.is_none_or(|end| range.start < end)
            })
    }
}

pub fn subject_node_id(subject: &str) -> String {
    format!("subject:{subject}")
}

impl CardGraph {
    /// Builds a graph from explicit parts, sorting them; used for ad hoc
    /// route queries. Endpoints must name nodes.
    pub fn from_parts(mut nodes: Vec<GraphNode>, mut edges: Vec<GraphEdge>) -> Self {
        nodes.sort();
        nodes.dedup_by(|a, b| a.id == b.id);
        edges.sort();
        edges.dedup();
        CardGraph { nodes, edges }
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.binary_search_by(|n| n.id.as_str().cmp(id)).is_ok()
    }

    /// Undirected neighbour sets.
    pub fn adjacency(&self) -> BTreeMap<&str, BTreeSet<&str>> {
        let mut adj: BTreeMap<&str, BTreeSet<&str>> = self.nodes.iter().map(|n| (n.id.as_str(), BTreeSet::new())).collect();
        for e in &self.edges {
            adj.entry(&e.from).or_default().insert(&e.to);
            adj.entry(&e.to).or_default().insert(&e.from);
        }
        adj
    }
}

/// Derives the card network from the cards the filter keeps.
pub fn build_graph<'c>(cards: impl IntoIterator<Item = &'c Card>, filter: &GraphFilter) -> CardGraph {
    let cards: BTreeMap<&str, &Card> = cards
        .into_iter()
        .filter(|c| filter.accepts(c))
        .map(|c| (c.card_id.as_str(), c))
        .collect();
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut subjects = BTreeSet::new();
    let pair = |a: &str, b: &str, kind| {
        let (from, to) = if a < b { (a, b) } else { (b, a) };
        GraphEdge {
            from: from.to_string(),
            to: to.to_string(),
            kind,
        }
    };

    for card in cards.values() {
        nodes.push(GraphNode {
            id: card.card_id.clone(),
            kind: NodeKind::Card,
            label: format!("{}@{}", card.concept_id, card.subject),
        });
        subjects.insert(card.subject.as_str());
        edges.push(GraphEdge {
            from: card.card_id.clone(),
            to: subject_node_id(&card.subject),
            kind: EdgeKind::SameSubject,
        });
        for event in &card.reasoning_trail {
            if event.kind == crate::cards::EventKind::ConflictDetected {
                if let Some(other) = event.detail.counterpart.as_deref().filter(|o| cards.contains_key(o)) {
                    edges.push(pair(&card.card_id, other, EdgeKind::Conflict));
                }
            }
        }
        if let Some(old) = card.supersedes.as_deref().filter(|o| cards.contains_key(o)) {
            edges.push(GraphEdge {
                from: card.card_id.clone(),
                to: old.to_string(),
                kind: EdgeKind::Supersedes,
            });
        }
    }
    for subject in subjects {
        nodes.push(GraphNode {
            id: subject_node_id(subject),
            kind: NodeKind::Subject,
            label: subject.to_string(),
        });
    }

    let evidence: Vec<(&str, BTreeSet<&str>)> = cards
        .values()
        .map(|c| (c.card_id.as_str(), c.evidence_ids().into_iter().collect()))
        .collect();
    for (i, (a, ea)) in evidence.iter().enumerate() {
        for (b, eb) in &evidence[i + 1..] {
            if !ea.is_disjoint(eb) {
                edges.push(pair(a, b, EdgeKind::EvidenceShared));
            }
        }
    }
    CardGraph::from_parts(nodes, edges)
}

/// All simple paths from `start` to `end` with at most `max_length` edges,
/// treating edges as undirected. Shorter paths come first, then
/// lexicographic order of the node-id sequence.
pub fn find_routes(graph: &CardGraph, start: &str, end: &str, max_length: usize) -> Result<Vec<Vec<String>>, GraphError> {
    for id in [start, end] {
        if !graph.contains(id) {
            return Err(GraphError::UnknownNode(id.to_string()));
        }
    }
    let adj = graph.adjacency();
    let mut routes = Vec::new();
    let mut path = vec![start];
    walk(&adj, end, max_length, &mut path, &mut routes);
    routes.sort_by(|a: &Vec<String>, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(routes)
}

fn walk<'g>(
    adj: &BTreeMap<&'g str, BTreeSet<&'g str>>,
    end: &str,
    max_length: usize,
    path: &mut Vec<&'g str>,
    out: &mut Vec<Vec<String>>,
) {
    let here = *path.last().expect("path starts non-empty");
    if here == end {
        out.push(path.iter().map(|s| s.to_string()).collect());
        return;
    }
    if path.len() > max_length {
        return;
    }
    for next in &adj[here] {
        if !path.contains(next) {
            path.push(next);
            walk(adj, end, max_length, path, out);
            path.pop();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Dot,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dot" => Ok(ExportFormat::Dot),
            "json" => Ok(ExportFormat::Json),
            other => Err(GraphError::UnknownFormat(other.to_string())),
        }
    }
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn export_graph(graph: &CardGraph, format: ExportFormat) -> String {
    match format {
        ExportFormat::Json => {
            let mut text = serde_json::to_string_pretty(graph).expect("graph serializes");
            text.push('\n');
            text
        }
        ExportFormat::Dot => {
            let mut out = String::from("digraph cards {\n");
            for n in &graph.nodes {
                let shape = match n.kind {
                    NodeKind::Card => "box",
                    NodeKind::Subject => "ellipse",
                };
                let _ = writeln!(out, "  {} [label={}, shape={shape}];", quote(&n.id), quote(&n.label));
            }
            for e in &graph.edges {
                let _ = writeln!(out, "  {} -> {} [label={}];", quote(&e.from), quote(&e.to), quote(e.kind.as_str()));
            }
            out.push_str("}\n");
            out
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardQuery {
    pub concept: Option<String>,
    pub status: Option<CardStatus>,
    pub subject: Option<String>,
    pub min_met: Option<u32>,
    pub max_met: Option<u32>,
}

impl CardQuery {
    pub fn matches(&self, card: &Card) -> bool {
        self.concept.as_ref().is_none_or(|c| *c == card.concept_id)
            && self.status.is_none_or(|s| s == card.status)
            && self.subject.as_ref().is_none_or(|s| *s == card.subject)
            && self.min_met.is_none_or(|m| card.criteria_met >= m)
            && self.max_met.is_none_or(|m| card.criteria_met <= m)
    }
}

/// Matching cards in card-id order, with evidence and trails intact.
pub fn query_cards(db: &CardDb, query: &CardQuery) -> Vec<Card> {
    db.cards().filter(|c| query.matches(c)).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cards::{process, Card};
    use crate::ontology::{load_ontology, OntologySpec};
    use crate::time::parse_instant;
    use proptest::prelude::*;

    const SPEC: &str = r#"{
      "id": "g", "version": "1",
      "entity_classes": [{"id": "worry", "description": "w"}, {"id": "cheer", "description": "c"}],
      "relationship_classes": [{"id": "shows", "description": "s"}],
      "concepts": [
        {"concept_id": "anxiety", "name": "a", "threshold": 1,
         "criteria": [{"index": 1, "description": "w", "match_patterns": [{"entity": "worry", "relationship": "shows"}]}]},
        {"concept_id": "upbeat", "name": "u", "threshold": 1,
         "criteria": [{"index": 1, "description": "c", "match_patterns": [{"entity": "cheer", "relationship": "shows"}]}]}
      ],
      "exclusion_rules": [{"concept_a": "anxiety", "concept_b": "upbeat", "resolution": "expire_older"}]
    }"#;

    fn spec() -> OntologySpec {
        load_ontology(SPEC).unwrap()
    }

    fn card(spec: &OntologySpec, concept: &str, subject: &str, evidence: &str, start: &str) -> Card {
        let mut c = Card::new(spec.concept(concept).unwrap(), subject, 1);
        c.add_evidence(1, evidence);
        c.validity.start = Some(parse_instant(start).unwrap());
        c
    }

    fn node(id: &str) -> GraphNode {
        GraphNode {
            id: id.into(),
            kind: NodeKind::Card,
            label: id.into(),
        }
    }

    fn edge(a: &str, b: &str) -> GraphEdge {
        GraphEdge {
            from: a.into(),
            to: b.into(),
            kind: EdgeKind::Conflict,
        }
    }

    #[test]
    fn single_card_graph() {
        let s = spec();
        let mut db = CardDb::in_memory();
        process(&mut db, vec![card(&s, "anxiety", "A", "r1", "2020-01-01")], &s, parse_instant("2020-02-01").unwrap()).unwrap();
        let g = build_graph(db.cards(), &GraphFilter::default());
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[0].kind, EdgeKind::SameSubject);
        let dot = export_graph(&g, ExportFormat::Dot);
        assert_eq!(dot.matches("->").count(), 1);
        assert!(dot.contains("label=\"anxiety@A\""));
        assert_eq!(dot, export_graph(&g, ExportFormat::Dot));
        let json: serde_json::Value = serde_json::from_str(&export_graph(&g, ExportFormat::Json)).unwrap();
        assert_eq!(json["nodes"].as_array().unwrap().len(), 2);
        assert_eq!(json["edges"].as_array().unwrap().len(), 1);
    }

    #[test]
    fn empty_store_gives_empty_graph() {
        assert_eq!(build_graph(CardDb::in_memory().cards(), &GraphFilter::default()), CardGraph::default());
    }

    #[test]
    fn shared_evidence_and_conflict_edges() {
        let s = spec();
        let mut db = CardDb::in_memory();
        let now = parse_instant("2020-02-01").unwrap();
        process(&mut db, vec![card(&s, "anxiety", "A", "r1", "2020-01-01")], &s, now).unwrap();
        process(&mut db, vec![card(&s, "upbeat", "A", "r1", "2020-01-05")], &s, now).unwrap();
        let g = build_graph(db.cards(), &GraphFilter::default());
        let kinds: BTreeSet<EdgeKind> = g.edges.iter().map(|e| e.kind).collect();
        assert!(kinds.contains(&EdgeKind::EvidenceShared));
        assert!(kinds.contains(&EdgeKind::Conflict));
        for e in &g.edges {
            assert!(g.contains(&e.from) && g.contains(&e.to));
        }
        let only_upbeat = GraphFilter {
            concepts: ["upbeat".to_string()].into(),
            ..GraphFilter::default()
        };
        assert_eq!(build_graph(db.cards(), &only_upbeat).nodes.len(), 2);
    }

    #[test]
    fn triangle_routes() {
        let g = CardGraph::from_parts(
            vec![node("A"), node("B"), node("C")],
            vec![edge("A", "B"), edge("B", "C"), edge("A", "C")],
        );
        assert_eq!(find_routes(&g, "A", "C", 3).unwrap(), vec![vec!["A", "C"], vec!["A", "B", "C"]]);
        assert_eq!(find_routes(&g, "A", "A", 3).unwrap(), vec![vec!["A"]]);
        assert_eq!(find_routes(&g, "A", "C", 1).unwrap(), vec![vec!["A", "C"]]);
        assert_eq!(find_routes(&g, "A", "Z", 3), Err(GraphError::UnknownNode("Z".into())));
        let split = CardGraph::from_parts(vec![node("A"), node("B")], vec![]);
        assert!(find_routes(&split, "A", "B", 6).unwrap().is_empty());
    }

    #[test]
    fn query_bounds() {
        let s = spec();
        let mut db = CardDb::in_memory();
        process(&mut db, vec![card(&s, "anxiety", "A", "r1", "2020-01-01")], &s, parse_instant("2020-02-01").unwrap()).unwrap();
        assert_eq!(query_cards(&db, &CardQuery::default()).len(), 1);
        let q = CardQuery {
            min_met: Some(2),
            ..CardQuery::default()
        };
        assert!(query_cards(&db, &q).is_empty());
        let q = CardQuery {
            status: Some(CardStatus::Committed),
            ..CardQuery::default()
        };
        assert_eq!(query_cards(&db, &q)[0].card_id, "anxiety@A#1");
    }

    /// Oracle: every ordered selection of distinct intermediate nodes, kept
    /// when consecutive nodes are adjacent.
    fn brute_routes(n: usize, adj: &[Vec<bool>], s: usize, t: usize, max: usize) -> BTreeSet<Vec<usize>> {
        fn extend(n: usize, prefix: &mut Vec<usize>, t: usize, max: usize, adj: &[Vec<bool>], out: &mut BTreeSet<Vec<usize>>) {
            let mut full = prefix.clone();
            if *prefix.last().unwrap() != t {
                full.push(t);
            }
            let distinct = full.iter().collect::<BTreeSet<_>>().len() == full.len();
            if distinct && full.len() - 1 <= max && full.windows(2).all(|w| adj[w[0]][w[1]]) {
                out.insert(full);
            }
            if prefix.len() >= n || *prefix.last().unwrap() == t {
                return;
            }
            for v in 0..n {
                if v != t && !prefix.contains(&v) {
                    prefix.push(v);
                    extend(n, prefix, t, max, adj, out);
                    prefix.pop();
                }
            }
        }
        let mut out = BTreeSet::new();
        extend(n, &mut vec![s], t, max, adj, &mut out);
        out
    }

    proptest! {
        #[test]
        #[allow(clippy::needless_range_loop)]
        fn routes_match_brute_force(n in 1usize..=8, bits in any::<u64>(), s in 0usize..8, t in 0usize..8, max in 1usize..8) {
            let (s, t) = (s % n, t % n);
            let name = |i: usize| format!("n{i}");
            let mut adj = vec![vec![false; n]; n];
            let mut edges = Vec::new();
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    if bits >> (k % 64) & 1 == 1 {
                        adj[i][j] = true;
                        adj[j][i] = true;
                        edges.push(edge(&name(i), &name(j)));
                    }
                    k += 1;
                }
            }
            let g = CardGraph::from_parts((0..n).map(|i| node(&name(i))).collect(), edges);
            let got = find_routes(&g, &name(s), &name(t), max).unwrap();
            for p in &got {
                prop_assert!(p.len() - 1 <= max);
                prop_assert_eq!(p.iter().collect::<BTreeSet<_>>().len(), p.len());
            }
            let want: BTreeSet<Vec<String>> = brute_routes(n, &adj, s, t, max)
                .into_iter()
                .map(|p| p.into_iter().map(name).collect())
                .collect();
            prop_assert_eq!(got.iter().cloned().collect::<BTreeSet<_>>(), want);
            prop_assert_eq!(got.len(), got.iter().collect::<BTreeSet<_>>().len());
        }
    }
}
