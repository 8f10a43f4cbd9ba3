//! Deterministic offline backends.
//!
//! All of these are stateless or immutable after construction, so they are
//! safe to share between worker threads, and every output is a pure function
//! of the constructor arguments and the call inputs.

use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    fallback_decision, Annotator, Arbiter, ArbitrationCase, ArbitrationOutcome, BackendError, Decision,
    DecisionSource, Embedder, Embedding, EntityAnnotation, Ranking, Reranker, Sampler, SamplerConfig,
    EMBEDDING_DIM,
};
use crate::schema::EntityType;

/// Lowercased alphanumeric runs with their character spans.
pub(crate) fn word_tokens(text: &str) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut pos = 0;
    for (i, c) in text.chars().enumerate() {
        pos = i + 1;
        if c.is_alphanumeric() {
            if current.is_empty() {
                start = i;
            }
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            out.push((std::mem::take(&mut current), start, i));
        }
    }
    if !current.is_empty() {
        out.push((current, start, pos));
    }
    out
}

pub(crate) fn seeded_rng(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p);
    }
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionaryEntry {
    pub alias: String,
    pub entity_type: EntityType,
    pub identifier: String,
    /// Defaults to the entity type's primary terminology.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminology: Option<String>,
}

impl DictionaryEntry {
    pub fn new(alias: &str, entity_type: EntityType, identifier: &str) -> Self {
        DictionaryEntry { alias: alias.to_string(), entity_type, identifier: identifier.to_string(), terminology: None }
    }
}

/// Case-insensitive, token-aligned alias lookup. Overlapping matches resolve
/// to the longest alias starting first.
#[derive(Debug, Clone, Default)]
pub struct DictionaryAnnotator {
    entries: Vec<DictionaryEntry>,
    by_first_token: HashMap<String, Vec<(Vec<String>, usize)>>,
}

impl DictionaryAnnotator {
    pub fn new(entries: Vec<DictionaryEntry>) -> Result<Self, BackendError> {
        let mut by_first_token: HashMap<String, Vec<(Vec<String>, usize)>> = HashMap::new();
        for (idx, e) in entries.iter().enumerate() {
            let terminology = e.terminology.as_deref().unwrap_or(e.entity_type.default_terminology());
            if !e.entity_type.accepts_terminology(terminology) {
                return Err(BackendError::Config(format!(
                    "dictionary entry `{}`: terminology `{terminology}` invalid for {}",
                    e.alias, e.entity_type
                )));
            }
            let tokens: Vec<String> = word_tokens(&e.alias).into_iter().map(|t| t.0).collect();
            let Some(first) = tokens.first().cloned() else {
                return Err(BackendError::Config(format!("dictionary alias `{}` has no word characters", e.alias)));
            };
            by_first_token.entry(first).or_default().push((tokens, idx));
        }
        for candidates in by_first_token.values_mut() {
            candidates.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));
        }
        Ok(DictionaryAnnotator { entries, by_first_token })
    }

    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self, BackendError> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| BackendError::Config(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(
                serde_json::from_str(&line)
                    .map_err(|e| BackendError::Config(format!("dictionary line {}: {e}", i + 1)))?,
            );
        }
        DictionaryAnnotator::new(entries)
    }

    pub fn entries(&self) -> &[DictionaryEntry] {
        &self.entries
    }
}

impl Annotator for DictionaryAnnotator {
    fn annotate(&self, text: &str) -> Result<Vec<EntityAnnotation>, BackendError> {
        let tokens = word_tokens(text);
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let hit = self.by_first_token.get(&tokens[i].0).and_then(|cands| {
                cands.iter().find(|(alias, _)| {
                    i + alias.len() <= tokens.len()
                        && alias.iter().zip(&tokens[i..]).all(|(a, t)| *a == t.0)
                })
            });
            match hit {
                Some((alias, idx)) => {
                    let e = &self.entries[*idx];
                    let (start, end) = (tokens[i].1, tokens[i + alias.len() - 1].2);
                    out.push(EntityAnnotation {
                        mention: chars[start..end].iter().collect(),
                        entity_type: e.entity_type,
                        identifier: e.identifier.clone(),
                        terminology: e
                            .terminology
                            .clone()
                            .unwrap_or_else(|| e.entity_type.default_terminology().to_string()),
                        span: (start, end),
                    });
                    i += alias.len();
                }
                None => i += 1,
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledLine {
    pub line: String,
    /// Number of samples (out of the rule's `n_samples`) containing the line.
    pub count: usize,
}

/// Outputs for every prompt containing `needle`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerRule {
    pub needle: String,
    pub n_samples: usize,
    pub lines: Vec<ScheduledLine>,
}

/// Replays a fixed schedule of outputs. For each scheduled line the set of
/// samples that contain it is drawn from a seeded shuffle, so the frequency
/// is exact while the placement varies per line.
#[derive(Debug, Clone, Default)]
pub struct ScriptedSampler {
    rules: Vec<SamplerRule>,
    constant: Option<String>,
    seed: u64,
}

impl ScriptedSampler {
    pub fn new(rules: Vec<SamplerRule>, seed: u64) -> Self {
        ScriptedSampler { rules, constant: None, seed }
    }

    /// Answers every prompt with the same text.
    pub fn constant(reply: impl Into<String>) -> Self {
        ScriptedSampler { rules: Vec::new(), constant: Some(reply.into()), seed: 0 }
    }

    pub fn from_jsonl<R: BufRead>(reader: R, seed: u64) -> Result<Self, BackendError> {
        let mut rules = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| BackendError::Config(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rule: SamplerRule = serde_json::from_str(&line)
                .map_err(|e| BackendError::Config(format!("sampler script line {}: {e}", i + 1)))?;
            if rule.lines.iter().any(|l| l.count > rule.n_samples) {
                return Err(BackendError::Config(format!("sampler script line {}: count exceeds n_samples", i + 1)));
            }
            rules.push(rule);
        }
        Ok(ScriptedSampler::new(rules, seed))
    }

    pub fn rules(&self) -> &[SamplerRule] {
        &self.rules
    }
}

impl Sampler for ScriptedSampler {
    fn sample(&self, prompt: &str, config: &SamplerConfig) -> Result<Vec<String>, BackendError> {
        config.validate()?;
        let n = config.n_samples;
        if let Some(reply) = &self.constant {
            return Ok(vec![reply.clone(); n]);
        }
        let Some(rule) = self.rules.iter().find(|r| prompt.contains(&r.needle)) else {
            return Ok(vec![String::new(); n]);
        };
        let mut outputs: Vec<Vec<&str>> = vec![Vec::new(); n];
        for (j, scheduled) in rule.lines.iter().enumerate() {
            // Frequencies are defined against the rule's sample count.
            let count = if n == rule.n_samples { scheduled.count } else { scheduled.count * n / rule.n_samples.max(1) };
            let mut rng = seeded_rng(&[&self.seed.to_le_bytes(), rule.needle.as_bytes(), &(j as u64).to_le_bytes()]);
            for slot in index::sample(&mut rng, n, count.min(n)) {
                outputs[slot].push(&scheduled.line);
            }
        }
        Ok(outputs.into_iter().map(|lines| lines.join("\n")).collect())
    }
}

/// Always returns the configured decision.
#[derive(Debug, Clone, Copy)]
pub struct ScriptedArbiter(pub Decision);

impl Arbiter for ScriptedArbiter {
    fn arbitrate(&self, _case: &ArbitrationCase, _config: &SamplerConfig) -> ArbitrationOutcome {
        ArbitrationOutcome { decision: self.0, source: DecisionSource::Scripted }
    }
}

/// Applies the deterministic confidence/recency policy directly.
#[derive(Debug, Clone, Copy, Default)]
pub struct PolicyArbiter;

impl Arbiter for PolicyArbiter {
    fn arbitrate(&self, case: &ArbitrationCase, _config: &SamplerConfig) -> ArbitrationOutcome {
        ArbitrationOutcome { decision: fallback_decision(case), source: DecisionSource::Policy }
    }
}

/// Feature-hashed character trigrams of the lowercased text, projected to a
/// unit vector. Strings sharing substrings get correlated vectors.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    seed: u64,
}

impl HashEmbedder {
    const SLOTS_PER_FEATURE: usize = 4;

    pub fn new(seed: u64) -> Self {
        HashEmbedder { seed }
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        let normalized = text.trim().to_lowercase();
        if normalized.is_empty() {
            return Err(BackendError::InvalidInput("cannot embed empty text".into()));
        }
        let padded: Vec<char> = std::iter::once(' ').chain(normalized.chars()).chain(std::iter::once(' ')).collect();
        let mut values = vec![0.0f64; EMBEDDING_DIM];
        let seed = self.seed.to_le_bytes();
        let mut first_slot = None;
        for gram in padded.windows(3) {
            let gram: String = gram.iter().collect();
            let mut hasher = Sha256::new();
            hasher.update(seed);
            hasher.update(gram.as_bytes());
            let digest = hasher.finalize();
            for k in 0..Self::SLOTS_PER_FEATURE {
                let word = u32::from_le_bytes(digest[4 * k..4 * k + 4].try_into().unwrap());
                let slot = (word >> 1) as usize % EMBEDDING_DIM;
                first_slot.get_or_insert(slot);
                values[slot] += if word & 1 == 0 { 1.0 } else { -1.0 };
            }
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            values[first_slot.unwrap_or(0)] = 1.0;
        } else {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Embedding::new(values)
    }
}

/// Input indices ordered by the number of distinct word tokens each triple
/// shares with the question; ties keep input order.
pub fn lexical_order(question: &str, triples: &[String]) -> Vec<usize> {
    let q: BTreeSet<String> = word_tokens(question).into_iter().map(|t| t.0).collect();
    let scores: Vec<usize> = triples
        .iter()
        .map(|t| {
            word_tokens(t)
                .into_iter()
                .map(|t| t.0)
                .collect::<BTreeSet<_>>()
                .intersection(&q)
                .count()
        })
        .collect();
    let mut order: Vec<usize> = (0..triples.len()).collect();
    order.sort_by(|a, b| scores[*b].cmp(&scores[*a]));
    order
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalReranker;

impl Reranker for LexicalReranker {
    fn rerank(&self, question: &str, triples: &[String], _config: &SamplerConfig) -> Result<Ranking, BackendError> {
        if triples.is_empty() {
            return Err(BackendError::InvalidInput("nothing to rerank".into()));
        }
        Ok(Ranking { order: lexical_order(question, triples), fallback: None })
    }
}

/// Returns a fixed permutation; falls back to lexical order when the
/// permutation does not fit the input.
#[derive(Debug, Clone, Default)]
pub struct ScriptedReranker {
    pub order: Vec<usize>,
}

pub(crate) fn is_permutation(order: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    order.len() == n && order.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
}

impl Reranker for ScriptedReranker {
    fn rerank(&self, question: &str, triples: &[String], _config: &SamplerConfig) -> Result<Ranking, BackendError> {
        if triples.is_empty() {
            return Err(BackendError::InvalidInput("nothing to rerank".into()));
        }
        if is_permutation(&self.order, triples.len()) {
            Ok(Ranking { order: self.order.clone(), fallback: None })
        } else {
            Ok(Ranking {
                order: lexical_order(question, triples),
                fallback: Some(format!("scripted order does not cover {} triples", triples.len())),
            })
        }
    }
}
