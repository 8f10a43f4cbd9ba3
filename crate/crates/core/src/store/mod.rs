//! The temporally evolving knowledge graph.
//!
//! Every entity pair holds at most one edge, whatever its relation. A
//! recurring triple reinforces the edge by noisy-OR fusion; a triple that
//! disagrees with the stored relation goes to the arbiter, which either keeps
//! the edge untouched or replaces it wholesale.

mod snapshot;
mod stats;

pub use snapshot::{load_snapshot, read_snapshot, save_snapshot, write_snapshot, SnapshotHeader, SNAPSHOT_FORMAT, SNAPSHOT_VERSION};
pub use stats::{confidence_bin, GraphStats, HistogramBin};

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{fallback_decision, ArbitrationCase, ArbitrationOutcome, Arbiter, Decision, DecisionSource, Embedding, EntityRef, RelationClaim,
    SamplerConfig};
use crate::extractor::{CandidateTriple, EnrichedEntity, TripleKey};
use crate::schema::{EntityType, RelationType};

pub const CONFIDENCE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceRange(f64),
    #[error("invalid triple {key}: {reason}")]
    InvalidTriple { key: String, reason: String },
    #[error("edge {key} already holds evidence from pubmed {pubmed_id}")]
    DuplicateEvidence { key: String, pubmed_id: u64 },
    #[error("stream out of order at position {position}: ({date}, {pubmed_id}) precedes the previous triple")]
    OutOfOrder { position: usize, date: NaiveDate, pubmed_id: u64 },
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("snapshot line {line}: {reason}")]
    Snapshot { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Noisy-OR: 1 − (1 − s)(1 − s′).
pub fn fuse_confidence(s: f64, s_new: f64) -> Result<f64, StoreError> {
    for v in [s, s_new] {
        if !(0.0..=1.0).contains(&v) {
            return Err(StoreError::ConfidenceRange(v));
        }
    }
    Ok(1.0 - (1.0 - s) * (1.0 - s_new))
}

/// Sequential noisy-OR fold starting from 0.
pub fn fold_confidence(values: impl IntoIterator<Item = f64>) -> Result<f64, StoreError> {
    values.into_iter().try_fold(0.0, fuse_confidence)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub identifier: String,
    pub name: String,
    pub entity_type: EntityType,
    pub terminology: String,
    pub page_link: String,
    pub exact_keywords: BTreeSet<String>,
    pub embedding: Embedding,
}

impl From<&EnrichedEntity> for Node {
    fn from(e: &EnrichedEntity) -> Self {
        Node {
            identifier: e.identifier.clone(),
            name: e.name.clone(),
            entity_type: e.entity_type,
            terminology: e.terminology.clone(),
            page_link: e.page_link.clone(),
            exact_keywords: e.exact_keywords.clone(),
            embedding: e.embedding.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub pubmed_id: u64,
    pub date: NaiveDate,
    pub sample_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub head: String,
    pub relation: RelationType,
    pub tail: String,
    pub confidence: f64,
    pub evidence: Vec<Evidence>,
    /// Date of the most recent supporting publication.
    pub timestamp: NaiveDate,
}

impl Edge {
    pub fn key(&self) -> TripleKey {
        TripleKey::new(self.head.clone(), self.relation, self.tail.clone())
    }

    pub fn pubmed_ids(&self) -> Vec<u64> {
        self.evidence.iter().map(|e| e.pubmed_id).collect()
    }

    pub fn earliest_evidence(&self) -> NaiveDate {
        self.evidence.iter().map(|e| e.date).min().unwrap_or(self.timestamp)
    }

    /// Confidence folded from evidence dated on or before `cutoff`, or
    /// `None` when no such evidence exists.
    pub fn confidence_as_of(&self, cutoff: NaiveDate) -> Option<f64> {
        let mut seen = false;
        let mut s = 0.0;
        for e in self.evidence.iter().filter(|e| e.date <= cutoff) {
            seen = true;
            s = 1.0 - (1.0 - s) * (1.0 - e.sample_confidence);
        }
        seen.then_some(s)
    }

    pub fn other_end(&self, id: &str) -> Option<&str> {
        if self.head == id {
            Some(&self.tail)
        } else if self.tail == id {
            Some(&self.head)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MergeAction {
    Insert,
    Reinforce,
    ConflictKeep,
    ConflictReplace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub action: MergeAction,
    pub head: String,
    pub relation: RelationType,
    pub tail: String,
    pub pubmed_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arbitration: Option<DecisionSource>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpsertOutcome {
    pub action: MergeAction,
    pub arbitration: Option<ArbitrationOutcome>,
}

/// Unordered entity pair, smaller identifier first.
pub type PairKey = (String, String);

pub fn pair_key(a: &str, b: &str) -> PairKey {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: BTreeMap<String, Node>,
    edges: BTreeMap<PairKey, Edge>,
    journal: Vec<JournalEntry>,
    adjacency: HashMap<String, BTreeSet<PairKey>>,
    keyword_index: HashMap<String, BTreeSet<String>>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges && self.journal == other.journal
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> + '_ {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> + '_ {
        self.edges.values()
    }

    pub fn journal(&self) -> &[JournalEntry] {
        &self.journal
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn edge_between(&self, a: &str, b: &str) -> Option<&Edge> {
        self.edges.get(&pair_key(a, b))
    }

    /// Nodes whose exact keywords contain `keyword` (already lowercased).
    pub fn nodes_with_keyword(&self, keyword: &str) -> impl Iterator<Item = &Node> + '_ {
        self.keyword_index.get(keyword).into_iter().flatten().filter_map(|id| self.nodes.get(id))
    }

    /// All edges incident to `id`, each with its opposite endpoint.
    pub fn neighbors(&self, id: &str) -> Result<Vec<(&Edge, &Node)>, StoreError> {
        if !self.nodes.contains_key(id) {
            return Err(StoreError::UnknownNode(id.to_string()));
        }
        Ok(self
            .adjacency
            .get(id)
            .into_iter()
            .flatten()
            .map(|pair| {
                let edge = &self.edges[pair];
                let other = edge.other_end(id).expect("adjacency lists incident edges");
                (edge, &self.nodes[other])
            })
            .collect())
    }

    /// Adds a node, or merges keywords into an existing node with the same
    /// identifier. Other attributes of an existing node are kept.
    pub fn upsert_node(&mut self, node: Node) {
        match self.nodes.get_mut(&node.identifier) {
            Some(existing) => {
                for k in node.exact_keywords {
                    if existing.exact_keywords.insert(k.clone()) {
                        self.keyword_index.entry(k).or_default().insert(node.identifier.clone());
                    }
                }
            }
            None => {
                for k in &node.exact_keywords {
                    self.keyword_index.entry(k.clone()).or_default().insert(node.identifier.clone());
                }
                self.nodes.insert(node.identifier.clone(), node);
            }
        }
    }

    fn put_edge(&mut self, edge: Edge) {
        let pair = pair_key(&edge.head, &edge.tail);
        self.adjacency.entry(edge.head.clone()).or_default().insert(pair.clone());
        self.adjacency.entry(edge.tail.clone()).or_default().insert(pair.clone());
        self.edges.insert(pair, edge);
    }

    /// Applies one triple: insert, reinforce, or conflict resolution.
    pub fn upsert(
        &mut self,
        triple: &CandidateTriple,
        arbiter: &dyn Arbiter,
        arbitration: &SamplerConfig,
    ) -> Result<UpsertOutcome, StoreError> {
        validate_triple(triple)?;
        // Bidirectional triples are stored with the smaller (type, identifier) first.
        let (head, tail) = if triple.relation.is_bidirectional()
            && (triple.tail.entity_type, &triple.tail.identifier) < (triple.head.entity_type, &triple.head.identifier)
        {
            (&triple.tail, &triple.head)
        } else {
            (&triple.head, &triple.tail)
        };
        let key = TripleKey::new(head.identifier.clone(), triple.relation, tail.identifier.clone());
        self.upsert_node(Node::from(head));
        self.upsert_node(Node::from(tail));
        let incoming = Evidence { pubmed_id: triple.pubmed_id, date: triple.timestamp, sample_confidence: triple.confidence };
        let fresh = Edge {
            head: key.head.clone(),
            relation: key.relation,
            tail: key.tail.clone(),
            confidence: triple.confidence,
            evidence: vec![incoming.clone()],
            timestamp: triple.timestamp,
        };
        let pair = pair_key(&key.head, &key.tail);

        let (action, arbitration) = match self.edges.get_mut(&pair) {
            None => {
                self.put_edge(fresh);
                (MergeAction::Insert, None)
            }
            Some(edge) if edge.key() == key => {
                if edge.evidence.iter().any(|e| e.pubmed_id == triple.pubmed_id) {
                    return Err(StoreError::DuplicateEvidence { key: key.to_string(), pubmed_id: triple.pubmed_id });
                }
                edge.confidence = fuse_confidence(edge.confidence, triple.confidence)?;
                edge.timestamp = edge.timestamp.max(triple.timestamp);
                edge.evidence.push(incoming);
                (MergeAction::Reinforce, None)
            }
            Some(edge) => {
                let case = ArbitrationCase::new(
                    EntityRef { name: self.nodes[&edge.head].name.clone(), identifier: edge.head.clone() },
                    EntityRef { name: self.nodes[&edge.tail].name.clone(), identifier: edge.tail.clone() },
                    RelationClaim { relation: edge.relation, confidence: edge.confidence, timestamp: edge.timestamp },
                    RelationClaim { relation: triple.relation, confidence: triple.confidence, timestamp: triple.timestamp },
                );
                // The same unidirectional relation reversed is not a relation
                // choice, so it is settled by policy rather than the arbiter.
                let outcome = if edge.relation == triple.relation {
                    ArbitrationOutcome { decision: fallback_decision(&case), source: DecisionSource::Policy }
                } else {
                    arbiter.arbitrate(&case, arbitration)
                };
                if outcome.is_fallback() {
                    log::warn!("arbitration fallback for {key}: {:?}", outcome.source);
                }
                match outcome.decision {
                    Decision::KeepExisting => (MergeAction::ConflictKeep, Some(outcome)),
                    Decision::ReplaceWithIncoming => {
                        self.put_edge(fresh);
                        (MergeAction::ConflictReplace, Some(outcome))
                    }
                }
            }
        };
        self.journal.push(JournalEntry {
            action,
            head: key.head,
            relation: key.relation,
            tail: key.tail,
            pubmed_id: triple.pubmed_id,
            arbitration: arbitration.as_ref().map(|o| o.source.clone()),
        });
        Ok(UpsertOutcome { action, arbitration })
    }

    /// Rebuilds a graph from stored parts, checking every edge invariant.
    /// Node identifiers must already be unique. Errors carry the edge index.
    pub(crate) fn from_parts(
        nodes: Vec<Node>,
        edges: Vec<Edge>,
        journal: Vec<JournalEntry>,
    ) -> Result<Graph, (usize, String)> {
        let mut g = Graph::new();
        for n in nodes {
            g.upsert_node(n);
        }
        for (i, e) in edges.into_iter().enumerate() {
            check_edge(&g, &e).map_err(|r| (i, r))?;
            if g.edges.contains_key(&pair_key(&e.head, &e.tail)) {
                return Err((i, format!("second edge on pair {}–{}", e.head, e.tail)));
            }
            g.put_edge(e);
        }
        g.journal = journal;
        Ok(g)
    }
}

fn check_edge(g: &Graph, e: &Edge) -> Result<(), String> {
    for id in [&e.head, &e.tail] {
        if !g.nodes.contains_key(id) {
            return Err(format!("edge endpoint {id} is not a node"));
        }
    }
    if e.head == e.tail {
        return Err("self-loop".into());
    }
    if e.evidence.is_empty() {
        return Err("edge without evidence".into());
    }
    let ids: BTreeSet<u64> = e.evidence.iter().map(|v| v.pubmed_id).collect();
    if ids.len() != e.evidence.len() {
        return Err("repeated pubmed id in evidence".into());
    }
    let latest = e.evidence.iter().map(|v| v.date).max().expect("non-empty");
    if latest != e.timestamp {
        return Err(format!("timestamp {} differs from latest evidence {latest}", e.timestamp));
    }
    let folded = fold_confidence(e.evidence.iter().map(|v| v.sample_confidence)).map_err(|x| x.to_string())?;
    if (folded - e.confidence).abs() > 1e-9 {
        return Err(format!("confidence {} differs from evidence fold {folded}", e.confidence));
    }
    Ok(())
}

fn validate_triple(t: &CandidateTriple) -> Result<(), StoreError> {
    let bad = |reason: &str| Err(StoreError::InvalidTriple { key: t.key().to_string(), reason: reason.to_string() });
    if !(0.0..=1.0).contains(&t.confidence) {
        return bad("confidence outside [0, 1]");
    }
    if t.head.identifier == t.tail.identifier {
        return bad("self-loop");
    }
    if t.pubmed_id == 0 {
        return bad("pubmed id must be positive");
    }
    if !t.relation.allows(t.head.entity_type, t.tail.entity_type) {
        return bad("entity types not allowed for relation");
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstructSummary {
    pub inserted: usize,
    pub reinforced: usize,
    pub conflict_kept: usize,
    pub conflict_replaced: usize,
    pub arbitration_fallbacks: usize,
}

impl ConstructSummary {
    pub fn record(&mut self, outcome: &UpsertOutcome) {
        match outcome.action {
            MergeAction::Insert => self.inserted += 1,
            MergeAction::Reinforce => self.reinforced += 1,
            MergeAction::ConflictKeep => self.conflict_kept += 1,
            MergeAction::ConflictReplace => self.conflict_replaced += 1,
        }
        if outcome.arbitration.as_ref().is_some_and(ArbitrationOutcome::is_fallback) {
            self.arbitration_fallbacks += 1;
        }
    }
}

/// Checks that a stream is sorted by (timestamp, pubmed id).
pub fn check_stream_order(stream: &[CandidateTriple]) -> Result<(), StoreError> {
    for (i, w) in stream.windows(2).enumerate() {
        if (w[1].timestamp, w[1].pubmed_id) < (w[0].timestamp, w[0].pubmed_id) {
            return Err(StoreError::OutOfOrder { position: i + 1, date: w[1].timestamp, pubmed_id: w[1].pubmed_id });
        }
    }
    Ok(())
}

/// Folds a chronologically ordered stream into the graph. The order is
/// checked before any triple is applied.
pub fn construct(
    graph: &mut Graph,
    stream: &[CandidateTriple],
    arbiter: &dyn Arbiter,
    arbitration: &SamplerConfig,
) -> Result<ConstructSummary, StoreError> {
    check_stream_order(stream)?;
    let mut summary = ConstructSummary::default();
    for t in stream {
        summary.record(&graph.upsert(t, arbiter, arbitration)?);
    }
    Ok(summary)
}
