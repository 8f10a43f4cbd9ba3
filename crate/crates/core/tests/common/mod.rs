#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::NaiveDate;
use tkg_core::backends::mock::HashEmbedder;
use tkg_core::backends::{EntityAnnotation, SamplerConfig};
use tkg_core::extractor::{enrich, CandidateTriple, EnrichedEntity};
use tkg_core::schema::{EntityType, RelationType};
use tkg_core::store::Graph;

pub fn date(s: &str) -> NaiveDate {
    s.parse().expect("fixture date")
}

pub fn entity_with_mentions(name: &str, ty: EntityType, id: &str, mentions: &[&str]) -> EnrichedEntity {
    let a = EntityAnnotation {
        mention: name.into(),
        entity_type: ty,
        identifier: id.into(),
        terminology: ty.default_terminology().into(),
        span: (0, name.chars().count()),
    };
    let mentions: Vec<String> = mentions.iter().map(|m| m.to_string()).collect();
    enrich(&a, &mentions, &HashEmbedder::new(0)).expect("mock embedder")
}

pub fn entity(name: &str, ty: EntityType, id: &str) -> EnrichedEntity {
    entity_with_mentions(name, ty, id, &[name])
}

pub fn candidate(
    head: &EnrichedEntity,
    relation: RelationType,
    tail: &EnrichedEntity,
    confidence: f64,
    pubmed_id: u64,
    day: &str,
) -> CandidateTriple {
    CandidateTriple {
        head: head.clone(),
        relation,
        tail: tail.clone(),
        confidence,
        pubmed_id,
        timestamp: date(day),
    }
}

pub fn arbitration() -> SamplerConfig {
    SamplerConfig::arbitration()
}

/// Tocilizumab lowers FGB and TNF, both of which rise with COVID-19; the
/// Treat edge is first reported after the support.
pub struct RepurposingFixture {
    pub graph: Graph,
    pub cutoff: NaiveDate,
    pub expected_score: f64,
}

pub fn repurposing_fixture() -> RepurposingFixture {
    use tkg_core::backends::mock::PolicyArbiter;
    let toc = entity("tocilizumab", EntityType::Chemical, "D000068800");
    let fgb = entity("FGB", EntityType::Gene, "2244");
    let tnf = entity("TNF", EntityType::Gene, "7124");
    let covid = entity("COVID-19", EntityType::Disease, "D000086382");
    let stream = vec![
        candidate(&toc, RelationType::NegativeCorrelate, &tnf, 0.9, 31000001, "2019-05-01"),
        candidate(&fgb, RelationType::PositiveCorrelate, &covid, 0.8, 32000001, "2020-03-10"),
        candidate(&tnf, RelationType::PositiveCorrelate, &covid, 0.95, 32000002, "2020-03-12"),
        candidate(&toc, RelationType::NegativeCorrelate, &fgb, 0.85, 32000003, "2020-04-02"),
        // After the cutoff: must not change path confidences.
        candidate(&toc, RelationType::NegativeCorrelate, &fgb, 0.7, 33000001, "2020-09-01"),
        candidate(&toc, RelationType::Treat, &covid, 0.9, 33000002, "2020-10-15"),
    ];
    let mut graph = Graph::new();
    tkg_core::store::construct(&mut graph, &stream, &PolicyArbiter, &arbitration()).expect("fixture stream");
    // Paths: toc–TNF–COVID = 0.9·0.95, toc–FGB–COVID = 0.85·0.8.
    let expected_score = (0.9 * 0.95 + 0.85 * 0.8) / 2.0;
    RepurposingFixture { graph, cutoff: date("2020-06-30"), expected_score }
}

pub fn count_by<T: Ord + Clone>(items: impl IntoIterator<Item = T>) -> BTreeMap<T, usize> {
    let mut out = BTreeMap::new();
    for i in items {
        *out.entry(i).or_default() += 1;
    }
    out
}
