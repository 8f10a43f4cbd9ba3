//! Per-abstract relation extraction.
//!
//! annotate → render prompt → sample N completions → parse each → canonicalize
//! → confidence from cross-sample frequency → threshold → enrich endpoints.
//!
//! Confidence is the fraction of samples that produced a triple, floored to
//! a multiple of 0.05. It is carried as an integer count of twentieths so the
//! discretization is exact.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Backends, Embedder, Embedding, EntityAnnotation, SamplerConfig, Templates};
use crate::corpus::AbstractRecord;
use crate::exec::Execution;
use crate::schema::{page_link, EntityType, RelationType};

pub const DEFAULT_THRESHOLD: f64 = 0.6;

#[derive(Debug, Error)]
#[error("abstract {pubmed_id}: {source}")]
pub struct ExtractError {
    pub pubmed_id: u64,
    #[source]
    pub source: BackendError,
}

/// (head, relation, tail) by identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TripleKey {
    pub head: String,
    pub relation: RelationType,
    pub tail: String,
}

impl TripleKey {
    pub fn new(head: impl Into<String>, relation: RelationType, tail: impl Into<String>) -> Self {
        TripleKey { head: head.into(), relation, tail: tail.into() }
    }
}

impl std::fmt::Display for TripleKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({} | {} | {})", self.head, self.relation, self.tail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Endpoint {
    pub entity_type: EntityType,
    pub identifier: String,
}

/// A schema-valid triple with typed endpoints.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ParsedTriple {
    pub head: Endpoint,
    pub relation: RelationType,
    pub tail: Endpoint,
}

impl ParsedTriple {
    pub fn key(&self) -> TripleKey {
        TripleKey::new(self.head.identifier.clone(), self.relation, self.tail.identifier.clone())
    }
}

/// Per-output parse accounting. Prose lines are ignored and not counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseStats {
    pub candidate_lines: usize,
    pub accepted: usize,
    pub malformed: usize,
    pub unknown_relation: usize,
    pub unknown_entity: usize,
    pub self_loop: usize,
    pub type_violation: usize,
}

impl ParseStats {
    pub fn dropped(&self) -> usize {
        self.malformed + self.unknown_relation + self.unknown_entity + self.self_loop + self.type_violation
    }

    fn add(&mut self, o: &ParseStats) {
        self.candidate_lines += o.candidate_lines;
        self.accepted += o.accepted;
        self.malformed += o.malformed;
        self.unknown_relation += o.unknown_relation;
        self.unknown_entity += o.unknown_entity;
        self.self_loop += o.self_loop;
        self.type_violation += o.type_violation;
    }
}

const EXTRANEOUS: &[char] = &['(', ')', '[', ']', '{', '}', '*', '`'];

/// Splits `(a | b | c)` into its three trimmed fields.
fn split_triple_line(line: &str) -> Option<[&str; 3]> {
    let inner = line.strip_prefix('(')?.strip_suffix(')')?;
    let mut fields = inner.split('|').map(str::trim);
    let out = [fields.next()?, fields.next()?, fields.next()?];
    if fields.next().is_some() {
        return None;
    }
    if out.iter().any(|f| f.is_empty() || f.contains(EXTRANEOUS) || f.chars().any(char::is_control)) {
        return None;
    }
    Some(out)
}

struct EntityResolver<'a> {
    by_id: HashMap<&'a str, EntityType>,
    by_mention: HashMap<String, &'a str>,
}

impl<'a> EntityResolver<'a> {
    fn new(entities: &'a [EntityAnnotation]) -> Self {
        let mut by_id = HashMap::new();
        let mut by_mention = HashMap::new();
        for e in entities {
            by_id.entry(e.identifier.as_str()).or_insert(e.entity_type);
            by_mention.entry(e.mention.to_lowercase()).or_insert(e.identifier.as_str());
        }
        EntityResolver { by_id, by_mention }
    }

    /// Identifier match first, then a case-insensitive mention match.
    fn resolve(&self, field: &str) -> Option<Endpoint> {
        let id = if self.by_id.contains_key(field) { field } else { self.by_mention.get(&field.to_lowercase()).copied()? };
        Some(Endpoint { entity_type: self.by_id[id], identifier: id.to_string() })
    }
}

/// Parses one completion. Only lines of the form
/// `(head | Relation_Name | tail)` naming annotated entities, a known
/// relation and an allowed type combination survive; everything else that
/// looks like a triple attempt is dropped and counted.
pub fn parse_triples(raw_output: &str, entities: &[EntityAnnotation]) -> (Vec<ParsedTriple>, ParseStats) {
    let resolver = EntityResolver::new(entities);
    let mut stats = ParseStats::default();
    let mut out = Vec::new();
    for line in raw_output.lines().map(str::trim) {
        if !(line.starts_with('(') || line.contains('|')) {
            continue;
        }
        stats.candidate_lines += 1;
        let Some([h, r, t]) = split_triple_line(line) else {
            stats.malformed += 1;
            continue;
        };
        let Ok(relation) = r.parse::<RelationType>() else {
            stats.unknown_relation += 1;
            continue;
        };
        let (Some(head), Some(tail)) = (resolver.resolve(h), resolver.resolve(t)) else {
            stats.unknown_entity += 1;
            continue;
        };
        if head.identifier == tail.identifier {
            stats.self_loop += 1;
            continue;
        }
        if !relation.allows(head.entity_type, tail.entity_type) {
            stats.type_violation += 1;
            continue;
        }
        stats.accepted += 1;
        out.push(ParsedTriple { head, relation, tail });
    }
    (out, stats)
}

/// Orients bidirectional triples so the endpoint with the smaller
/// (entity type, identifier) comes first. Unidirectional triples are unchanged.
pub fn canonicalize(triple: ParsedTriple) -> ParsedTriple {
    if triple.relation.is_bidirectional() && triple.tail < triple.head {
        ParsedTriple { head: triple.tail, relation: triple.relation, tail: triple.head }
    } else {
        triple
    }
}

/// A confidence that is an exact multiple of 0.05, stored in twentieths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DiscreteConfidence(u8);

impl DiscreteConfidence {
    /// floor(20·count / n) twentieths.
    pub fn from_frequency(count: usize, n: usize) -> Self {
        assert!(n > 0 && count <= n, "frequency {count}/{n} out of range");
        DiscreteConfidence((20 * count / n) as u8)
    }

    pub fn twentieths(self) -> u8 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 20.0
    }
}

/// Confidence per canonical triple: its presence count across samples (at
/// most one per sample), discretized against the number of samples.
pub fn estimate_confidence(sample_parses: &[Vec<ParsedTriple>]) -> BTreeMap<TripleKey, DiscreteConfidence> {
    let n = sample_parses.len();
    let mut counts: BTreeMap<TripleKey, usize> = BTreeMap::new();
    for sample in sample_parses {
        let distinct: HashSet<TripleKey> = sample.iter().cloned().map(|t| canonicalize(t).key()).collect();
        for key in distinct {
            *counts.entry(key).or_default() += 1;
        }
    }
    counts.into_iter().map(|(k, c)| (k, DiscreteConfidence::from_frequency(c, n))).collect()
}

/// Keeps entries with confidence ≥ `threshold`.
pub fn filter_low_confidence<K: Ord>(
    scored: BTreeMap<K, DiscreteConfidence>,
    threshold: f64,
) -> BTreeMap<K, DiscreteConfidence> {
    scored.into_iter().filter(|(_, c)| c.value() >= threshold).collect()
}

/// An endpoint with its normalized attributes, lowercase aliases and embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichedEntity {
    pub name: String,
    pub entity_type: EntityType,
    pub identifier: String,
    pub terminology: String,
    pub page_link: String,
    pub exact_keywords: BTreeSet<String>,
    pub embedding: Embedding,
}

/// Builds the enriched form of an entity from every mention of its
/// identifier in the abstract. The embedding input is the entity name.
pub fn enrich(
    annotation: &EntityAnnotation,
    all_mentions_of_id: &[String],
    embedder: &dyn Embedder,
) -> Result<EnrichedEntity, BackendError> {
    let mut exact_keywords: BTreeSet<String> = all_mentions_of_id.iter().map(|m| m.to_lowercase()).collect();
    exact_keywords.insert(annotation.mention.to_lowercase());
    Ok(EnrichedEntity {
        name: annotation.mention.clone(),
        entity_type: annotation.entity_type,
        identifier: annotation.identifier.clone(),
        terminology: annotation.terminology.clone(),
        page_link: page_link(&annotation.terminology, &annotation.identifier),
        exact_keywords,
        embedding: embedder.embed(&annotation.mention)?,
    })
}

/// Extractor output handed to graph construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTriple {
    pub head: EnrichedEntity,
    pub relation: RelationType,
    pub tail: EnrichedEntity,
    pub confidence: f64,
    pub pubmed_id: u64,
    pub timestamp: NaiveDate,
}

impl CandidateTriple {
    pub fn key(&self) -> TripleKey {
        TripleKey::new(self.head.identifier.clone(), self.relation, self.tail.identifier.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionLogEntry {
    pub pubmed_id: u64,
    pub n_entities: usize,
    /// Triple-shaped lines across all samples.
    pub n_raw_triples: usize,
    pub n_dropped_malformed: usize,
    /// Well-formed lines rejected by the schema (relation, entity, self-loop, type pair).
    pub n_dropped_schema: usize,
    pub n_retained: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbstractExtraction {
    pub triples: Vec<CandidateTriple>,
    pub log: ExtractionLogEntry,
}

#[derive(Debug, Clone)]
pub struct ExtractionConfig {
    pub sampler: SamplerConfig,
    pub threshold: f64,
    pub templates: Templates,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig { sampler: SamplerConfig::extraction(), threshold: DEFAULT_THRESHOLD, templates: Templates::default() }
    }
}

pub fn render_entities(groups: &[(String, EntityType, Vec<String>)]) -> String {
    groups
        .iter()
        .map(|(id, ty, mentions)| format!("{id} | {ty} | {}", mentions.join("; ")))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_relation_schema() -> String {
    RelationType::ALL
        .iter()
        .map(|r| {
            let pairs = r.allowed_type_pairs();
            let allowed = if pairs.len() == EntityType::ALL.len() * EntityType::ALL.len() {
                "any".to_string()
            } else {
                let sep = if r.is_bidirectional() { "-" } else { "->" };
                pairs
                    .iter()
                    .filter(|(h, t)| !r.is_bidirectional() || h <= t)
                    .map(|(h, t)| format!("{h}{sep}{t}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            let dir = if r.is_bidirectional() { "bidirectional" } else { "unidirectional" };
            format!("{} | {dir} | {allowed} | {}", r.name(), r.description())
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Runs the full extraction for one abstract.
pub fn extract_from_abstract(
    record: &AbstractRecord,
    backends: &Backends,
    config: &ExtractionConfig,
) -> Result<AbstractExtraction, ExtractError> {
    let pubmed_id = record.pubmed_id();
    let err = |source| ExtractError { pubmed_id, source };
    let mut log = ExtractionLogEntry { pubmed_id, ..Default::default() };

    let annotations = backends.annotator.annotate(record.text()).map_err(err)?;
    for a in &annotations {
        a.validate(record.text()).map_err(err)?;
    }
    // Mentions grouped by identifier, in order of first appearance.
    let mut groups: Vec<(String, EntityType, Vec<String>)> = Vec::new();
    let mut first_annotation: HashMap<&str, &EntityAnnotation> = HashMap::new();
    for a in &annotations {
        match groups.iter_mut().find(|g| g.0 == a.identifier) {
            Some(g) => {
                if !g.2.contains(&a.mention) {
                    g.2.push(a.mention.clone());
                }
            }
            None => {
                groups.push((a.identifier.clone(), a.entity_type, vec![a.mention.clone()]));
                first_annotation.insert(a.identifier.as_str(), a);
            }
        }
    }
    log.n_entities = groups.len();
    if groups.len() < 2 {
        return Ok(AbstractExtraction { triples: Vec::new(), log });
    }

    let prompt = config.templates.extraction.render(&[
        ("abstract", record.text()),
        ("entities", &render_entities(&groups)),
        ("relations", &render_relation_schema()),
        ("pubmed_id", &pubmed_id.to_string()),
    ]);
    let outputs = backends.sampler.sample(&prompt, &config.sampler).map_err(err)?;

    let mut stats = ParseStats::default();
    let parses: Vec<Vec<ParsedTriple>> = outputs
        .iter()
        .map(|o| {
            let (triples, s) = parse_triples(o, &annotations);
            stats.add(&s);
            triples.into_iter().map(canonicalize).collect()
        })
        .collect();
    log.n_raw_triples = stats.candidate_lines;
    log.n_dropped_malformed = stats.malformed;
    log.n_dropped_schema = stats.dropped() - stats.malformed;

    // The frequency denominator is the configured sample count even if the
    // backend returned fewer outputs.
    let mut padded = parses;
    padded.resize(config.sampler.n_samples.max(padded.len()), Vec::new());
    let retained = filter_low_confidence(estimate_confidence(&padded), config.threshold);

    let mut enriched: HashMap<&str, EnrichedEntity> = HashMap::new();
    let mut triples = Vec::with_capacity(retained.len());
    for (key, confidence) in retained {
        for id in [&key.head, &key.tail] {
            if !enriched.contains_key(id.as_str()) {
                let (ann_id, ann) = first_annotation.get_key_value(id.as_str()).expect("parsed ids are annotated");
                let mentions = &groups.iter().find(|g| g.0 == **ann_id).expect("grouped").2;
                enriched.insert(ann_id, enrich(ann, mentions, backends.embedder.as_ref()).map_err(err)?);
            }
        }
        triples.push(CandidateTriple {
            head: enriched[key.head.as_str()].clone(),
            relation: key.relation,
            tail: enriched[key.tail.as_str()].clone(),
            confidence: confidence.value(),
            pubmed_id,
            timestamp: record.date(),
        });
    }
    log.n_retained = triples.len();
    Ok(AbstractExtraction { triples, log })
}

/// Extracts every record, in parallel when `exec` allows, returning results
/// in input order.
pub fn extract_all(
    records: &[&AbstractRecord],
    backends: &Backends,
    config: &ExtractionConfig,
    exec: Execution,
) -> Vec<Result<AbstractExtraction, ExtractError>> {
    exec.map(records, |r| extract_from_abstract(r, backends, config))
}
