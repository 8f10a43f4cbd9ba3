use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Graph;
use crate::schema::{EntityType, RelationType};

/// Index of the 0.05-wide bin holding `s`: floor(20·s), clamped to 0..=20.
/// A 1e-9 allowance absorbs rounding in folded confidences such as
/// 0.8499999999999999, which belongs to the 0.85 bin.
pub fn confidence_bin(s: f64) -> usize {
    ((20.0 * s + 1e-9).floor().max(0.0) as usize).min(20)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Lower edge of the bin, a multiple of 0.05.
    pub lower: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub node_count: usize,
    pub edge_count: usize,
    pub nodes_by_type: BTreeMap<EntityType, usize>,
    pub edges_by_relation: BTreeMap<RelationType, usize>,
    pub confidence_histogram: Vec<HistogramBin>,
}

impl GraphStats {
    pub fn of(graph: &Graph) -> Self {
        let mut nodes_by_type: BTreeMap<EntityType, usize> = EntityType::ALL.iter().map(|t| (*t, 0)).collect();
        for n in graph.nodes() {
            *nodes_by_type.get_mut(&n.entity_type).expect("all types present") += 1;
        }
        let mut edges_by_relation: BTreeMap<RelationType, usize> = RelationType::ALL.iter().map(|r| (*r, 0)).collect();
        let mut bins = [0usize; 21];
        for e in graph.edges() {
            *edges_by_relation.get_mut(&e.relation).expect("all relations present") += 1;
            bins[confidence_bin(e.confidence)] += 1;
        }
        GraphStats {
            node_count: graph.node_count(),
            edge_count: graph.edge_count(),
            nodes_by_type,
            edges_by_relation,
            confidence_histogram: bins
                .iter()
                .enumerate()
                .map(|(i, &count)| HistogramBin { lower: i as f64 / 20.0, count })
                .collect(),
        }
    }

    pub fn bin_count(&self, lower: f64) -> usize {
        self.confidence_histogram[confidence_bin(lower)].count
    }
}
