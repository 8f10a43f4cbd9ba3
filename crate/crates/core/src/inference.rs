//! Path-based treatment hypotheses under a temporal cutoff.
//!
//! A hypothesis links a chemical to a disease through typed relation chains
//! such as Chemical –Negative_Correlate– Gene –Positive_Correlate– Disease.
//! Only evidence dated on or before the cutoff is visible: an edge without
//! such evidence does not exist, and an edge's confidence is the noisy-OR of
//! its visible evidence. The score of a pair is the mean over its paths of
//! the product of edge confidences.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::schema::{EntityType, RelationType};
use crate::store::{Edge, Graph};

#[derive(Debug, Error, PartialEq)]
pub enum InferenceError {
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("a hypothesis needs at least one supporting path")]
    NoPaths,
    #[error("invalid pattern: {0}")]
    InvalidPattern(String),
}

/// One step of a pattern. For unidirectional relations the stored edge must
/// point from the `from` side to the `to` side; bidirectional relations
/// match either orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub relation: RelationType,
    pub from: EntityType,
    pub to: EntityType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathPattern {
    pub hops: Vec<Hop>,
}

impl PathPattern {
    pub fn new(hops: Vec<Hop>) -> Result<Self, InferenceError> {
        if hops.is_empty() {
            return Err(InferenceError::InvalidPattern("no hops".into()));
        }
        for w in hops.windows(2) {
            if w[0].to != w[1].from {
                return Err(InferenceError::InvalidPattern(format!("hop ending at {} followed by hop from {}", w[0].to, w[1].from)));
            }
        }
        Ok(PathPattern { hops })
    }

    /// Chemical –Negative_Correlate→ Gene –Positive_Correlate→ Disease.
    pub fn negative_then_positive() -> Self {
        PathPattern {
            hops: vec![
                Hop { relation: RelationType::NegativeCorrelate, from: EntityType::Chemical, to: EntityType::Gene },
                Hop { relation: RelationType::PositiveCorrelate, from: EntityType::Gene, to: EntityType::Disease },
            ],
        }
    }

    /// Chemical –Positive_Correlate→ Gene –Negative_Correlate→ Disease.
    pub fn positive_then_negative() -> Self {
        PathPattern {
            hops: vec![
                Hop { relation: RelationType::PositiveCorrelate, from: EntityType::Chemical, to: EntityType::Gene },
                Hop { relation: RelationType::NegativeCorrelate, from: EntityType::Gene, to: EntityType::Disease },
            ],
        }
    }

    pub fn source_type(&self) -> EntityType {
        self.hops[0].from
    }

    pub fn target_type(&self) -> EntityType {
        self.hops[self.hops.len() - 1].to
    }
}

impl Default for PathPattern {
    fn default() -> Self {
        PathPattern::negative_then_positive()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEdge {
    pub head: String,
    pub relation: RelationType,
    pub tail: String,
    /// Confidence from evidence on or before the cutoff.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub nodes: Vec<String>,
    pub edges: Vec<PathEdge>,
    pub score: f64,
}

fn hop_matches(graph: &Graph, edge: &Edge, hop: &Hop, from: &str, to: &str) -> bool {
    edge.relation == hop.relation
        && (hop.relation.is_bidirectional() || (edge.head == from && edge.tail == to))
        && graph.node(to).is_some_and(|n| n.entity_type == hop.to)
}

/// Depth-first expansion of `pattern` from `source`, calling `emit` for each
/// complete simple path.
fn walk(graph: &Graph, pattern: &PathPattern, source: &str, cutoff: NaiveDate, mut emit: impl FnMut(Path)) {
    fn rec(
        graph: &Graph,
        hops: &[Hop],
        cutoff: NaiveDate,
        nodes: &mut Vec<String>,
        edges: &mut Vec<PathEdge>,
        emit: &mut dyn FnMut(Path),
    ) {
        let Some((hop, rest)) = hops.split_first() else {
            let score = edges.iter().map(|e| e.confidence).product();
            emit(Path { nodes: nodes.clone(), edges: edges.clone(), score });
            return;
        };
        let here = nodes.last().expect("path starts at the source").clone();
        let Ok(neighbors) = graph.neighbors(&here) else { return };
        for (edge, other) in neighbors {
            if nodes.contains(&other.identifier) || !hop_matches(graph, edge, hop, &here, &other.identifier) {
                continue;
            }
            let Some(confidence) = edge.confidence_as_of(cutoff) else { continue };
            nodes.push(other.identifier.clone());
            edges.push(PathEdge { head: edge.head.clone(), relation: edge.relation, tail: edge.tail.clone(), confidence });
            rec(graph, rest, cutoff, nodes, edges, emit);
            nodes.pop();
            edges.pop();
        }
    }
    if graph.node(source).is_none_or(|n| n.entity_type != pattern.source_type()) {
        return;
    }
    rec(graph, &pattern.hops, cutoff, &mut vec![source.to_string()], &mut Vec::new(), &mut emit);
}

/// All simple paths from `source` to `target` matching `pattern` whose every
/// edge has evidence on or before `cutoff`.
pub fn find_paths(
    graph: &Graph,
    pattern: &PathPattern,
    source: &str,
    target: &str,
    cutoff: NaiveDate,
) -> Result<Vec<Path>, InferenceError> {
    for id in [source, target] {
        if graph.node(id).is_none() {
            return Err(InferenceError::UnknownNode(id.to_string()));
        }
    }
    let mut out = Vec::new();
    walk(graph, pattern, source, cutoff, |p| {
        if p.nodes.last().map(String::as_str) == Some(target) {
            out.push(p);
        }
    });
    Ok(out)
}

/// Mean over paths of the product of edge confidences.
pub fn score_hypothesis(paths: &[Path]) -> Result<f64, InferenceError> {
    if paths.is_empty() {
        return Err(InferenceError::NoPaths);
    }
    let total: f64 = paths.iter().map(|p| p.edges.iter().map(|e| e.confidence).product::<f64>()).sum();
    Ok(total / paths.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub chemical: String,
    pub disease: String,
    pub relation: RelationType,
    pub score: f64,
    pub cutoff: NaiveDate,
    pub paths: Vec<Path>,
}

/// True when a Treat edge from `chemical` to `disease` already has
/// evidence on or before the cutoff.
pub fn already_reported(graph: &Graph, chemical: &str, disease: &str, cutoff: NaiveDate) -> bool {
    graph.edge_between(chemical, disease).is_some_and(|e| {
        e.relation == RelationType::Treat && e.head == chemical && e.earliest_evidence() <= cutoff
    })
}

/// Scores every unreported (source, target) pair reachable by the pattern,
/// ranked by score descending then identifiers, truncated to `limit`.
pub fn enumerate_hypotheses(
    graph: &Graph,
    pattern: &PathPattern,
    cutoff: NaiveDate,
    limit: usize,
    exec: Execution,
) -> Vec<Hypothesis> {
    let sources: Vec<&str> = graph
        .nodes()
        .filter(|n| n.entity_type == pattern.source_type())
        .map(|n| n.identifier.as_str())
        .collect();
    let per_source = exec.map(&sources, |&source| {
        let mut by_target: BTreeMap<String, Vec<Path>> = BTreeMap::new();
        walk(graph, pattern, source, cutoff, |p| {
            by_target.entry(p.nodes.last().expect("non-empty").clone()).or_default().push(p);
        });
        by_target
            .into_iter()
            .filter(|(target, _)| !already_reported(graph, source, target, cutoff))
            .map(|(target, paths)| Hypothesis {
                chemical: source.to_string(),
                disease: target,
                relation: RelationType::Treat,
                score: score_hypothesis(&paths).expect("grouped paths are non-empty"),
                cutoff,
                paths,
            })
            .collect::<Vec<_>>()
    });
    let mut all: Vec<Hypothesis> = per_source.into_iter().flatten().collect();
    all.sort_by(|a, b| {
        b.score.total_cmp(&a.score).then_with(|| (&a.chemical, &a.disease).cmp(&(&b.chemical, &b.disease)))
    });
    all.truncate(limit);
    all
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestEntry {
    #[serde(flatten)]
    pub hypothesis: Hypothesis,
    pub confirmed: bool,
    pub confirmation_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub cutoff: NaiveDate,
    /// False when the graph holds no evidence after the cutoff, in which
    /// case nothing can be confirmed and no predictions are made.
    pub eligible: bool,
    pub predictions: Vec<BacktestEntry>,
    pub confirmed_count: usize,
}

/// Predicts from evidence up to `cutoff` and checks each prediction
/// against Treat edges first reported after it.
pub fn backtest(graph: &Graph, pattern: &PathPattern, cutoff: NaiveDate, exec: Execution) -> BacktestReport {
    let eligible = graph.edges().flat_map(|e| &e.evidence).any(|v| v.date > cutoff);
    let predictions: Vec<BacktestEntry> = if eligible {
        enumerate_hypotheses(graph, pattern, cutoff, usize::MAX, exec)
            .into_iter()
            .map(|h| {
                let confirmation_date = graph
                    .edge_between(&h.chemical, &h.disease)
                    .filter(|e| e.relation == RelationType::Treat && e.head == h.chemical)
                    .map(Edge::earliest_evidence)
                    .filter(|d| *d > cutoff);
                BacktestEntry { confirmed: confirmation_date.is_some(), confirmation_date, hypothesis: h }
            })
            .collect()
    } else {
        Vec::new()
    };
    let confirmed_count = predictions.iter().filter(|p| p.confirmed).count();
    BacktestReport { cutoff, eligible, predictions, confirmed_count }
}
