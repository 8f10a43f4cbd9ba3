//! Timeline ingestion: extraction fans out over abstracts, construction
//! folds the results into the graph in (date, pubmed id) order.

use serde::{Deserialize, Serialize};

use crate::backends::{Backends, SamplerConfig};
use crate::corpus::{AbstractRecord, DailyTimeline};
use crate::exec::Execution;
use crate::extractor::{extract_all, CandidateTriple, ExtractError, ExtractionConfig, ExtractionLogEntry};
use crate::store::{construct, ConstructSummary, Graph, StoreError};

/// Abstracts extracted per batch before their triples are merged.
pub const DEFAULT_BATCH: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("extraction: {0}")]
    Extract(#[from] ExtractError),
    #[error("construction: {0}")]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub abstracts_processed: usize,
    pub abstracts_with_triples: usize,
    pub candidate_triples: usize,
    pub construction: ConstructSummary,
}

#[derive(Debug)]
pub struct IngestOutcome {
    pub graph: Graph,
    pub log: Vec<ExtractionLogEntry>,
    pub candidates: Vec<CandidateTriple>,
    pub summary: IngestSummary,
    /// The failure that stopped ingestion. Everything before the failing
    /// abstract has been merged into `graph`.
    pub error: Option<IngestError>,
}

pub fn ingest(
    mut graph: Graph,
    timeline: &DailyTimeline,
    backends: &Backends,
    config: &ExtractionConfig,
    arbitration: &SamplerConfig,
    exec: Execution,
    batch: usize,
) -> IngestOutcome {
    let records: Vec<&AbstractRecord> = timeline.records().collect();
    let mut log = Vec::with_capacity(records.len());
    let mut candidates = Vec::new();
    let mut summary = IngestSummary::default();
    let mut error = None;

    'batches: for chunk in records.chunks(batch.max(1)) {
        let mut batch_triples = Vec::new();
        for result in extract_all(chunk, backends, config, exec) {
            match result {
                Ok(extraction) => {
                    summary.abstracts_processed += 1;
                    if !extraction.triples.is_empty() {
                        summary.abstracts_with_triples += 1;
                    }
                    log.push(extraction.log);
                    batch_triples.extend(extraction.triples);
                }
                Err(e) => {
                    error = Some(IngestError::Extract(e));
                    break;
                }
            }
        }
        summary.candidate_triples += batch_triples.len();
        match construct(&mut graph, &batch_triples, backends.arbiter.as_ref(), arbitration) {
            Ok(s) => {
                summary.construction.inserted += s.inserted;
                summary.construction.reinforced += s.reinforced;
                summary.construction.conflict_kept += s.conflict_kept;
                summary.construction.conflict_replaced += s.conflict_replaced;
                summary.construction.arbitration_fallbacks += s.arbitration_fallbacks;
            }
            Err(e) => {
                error.get_or_insert(IngestError::Store(e));
            }
        }
        candidates.extend(batch_triples);
        if error.is_some() {
            break 'batches;
        }
    }
    IngestOutcome { graph, log, candidates, summary, error }
}
