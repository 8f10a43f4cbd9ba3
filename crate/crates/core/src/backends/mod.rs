//! Pluggable model-facing capabilities.
//!
//! Every capability the pipeline needs from a model (entity annotation,
//! relation sampling, conflict arbitration, embedding, reranking) sits behind
//! a trait here. Each trait has a remote implementation in [`http`] and a
//! deterministic offline implementation in [`mock`], so the full pipeline can
//! run without network access.

pub mod config;
pub mod http;
pub mod mock;
pub mod templates;

use std::sync::Arc;
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{EntityType, RelationType};

pub use config::{AnnotatorKind, ArbiterKind, BackendConfig, EmbedderKind, RerankerKind, SamplerKind};
pub use templates::{PromptTemplate, Templates, TemplateError};

pub const EMBEDDING_DIM: usize = 768;
pub const EXTRACTION_TEMPERATURE: f64 = 0.7;
pub const ARBITRATION_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_SAMPLES: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// One entity mention found by the annotator. Span offsets count characters,
/// not bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityAnnotation {
    pub mention: String,
    pub entity_type: EntityType,
    pub identifier: String,
    pub terminology: String,
    pub span: (usize, usize),
}

impl EntityAnnotation {
    pub fn validate(&self, text: &str) -> Result<(), BackendError> {
        let len = text.chars().count();
        if self.span.0 > self.span.1 || self.span.1 > len {
            return Err(BackendError::InvalidResponse(format!(
                "span {:?} outside text of length {len}",
                self.span
            )));
        }
        if self.identifier.is_empty() {
            return Err(BackendError::InvalidResponse("empty identifier".into()));
        }
        if !self.entity_type.accepts_terminology(&self.terminology) {
            return Err(BackendError::InvalidResponse(format!(
                "terminology `{}` does not match entity type {}",
                self.terminology, self.entity_type
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_samples: usize,
    pub temperature: f64,
    #[serde(with = "millis")]
    pub timeout: Duration,
    pub max_retries: u32,
}

impl SamplerConfig {
    pub fn extraction() -> Self {
        SamplerConfig {
            n_samples: DEFAULT_SAMPLES,
            temperature: EXTRACTION_TEMPERATURE,
            timeout: Duration::from_secs(60),
            max_retries: 3,
        }
    }

    pub fn arbitration() -> Self {
        SamplerConfig { n_samples: 1, temperature: ARBITRATION_TEMPERATURE, ..Self::extraction() }
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.n_samples = n;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.n_samples == 0 {
            return Err(BackendError::Config("n_samples must be at least 1".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::Config(format!("invalid temperature {}", self.temperature)));
        }
        Ok(())
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Fixed-length entity embedding. All values finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, BackendError> {
        if values.len() != EMBEDDING_DIM {
            return Err(BackendError::InvalidResponse(format!(
                "embedding has {} dimensions, expected {EMBEDDING_DIM}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::InvalidResponse("embedding contains non-finite values".into()));
        }
        Ok(Embedding(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            dot / denom
        }
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = BackendError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Embedding::new(v)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRef {
    pub name: String,
    pub identifier: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationClaim {
    pub relation: RelationType,
    pub confidence: f64,
    pub timestamp: NaiveDate,
}

/// An existing edge and an incoming triple disagreeing on one entity pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrationCase {
    pub head: EntityRef,
    pub tail: EntityRef,
    pub existing: RelationClaim,
    pub incoming: RelationClaim,
}

impl ArbitrationCase {
    pub fn new(head: EntityRef, tail: EntityRef, existing: RelationClaim, incoming: RelationClaim) -> Self {
        ArbitrationCase { head, tail, existing, incoming }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    KeepExisting,
    ReplaceWithIncoming,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", content = "detail", rename_all = "snake_case")]
pub enum DecisionSource {
    Model,
    Scripted,
    Policy,
    /// The arbiter could not produce a verdict and the deterministic policy
    /// was applied instead.
    Fallback(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArbitrationOutcome {
    pub decision: Decision,
    pub source: DecisionSource,
}

impl ArbitrationOutcome {
    pub fn is_fallback(&self) -> bool {
        matches!(self.source, DecisionSource::Fallback(_))
    }
}

const CONFIDENCE_EPS: f64 = 1e-12;

/// Deterministic conflict policy: higher confidence wins, then the newer
/// timestamp, then the existing edge.
pub fn fallback_decision(case: &ArbitrationCase) -> Decision {
    let (s, s_new) = (case.existing.confidence, case.incoming.confidence);
    if (s - s_new).abs() > CONFIDENCE_EPS {
        return if s_new > s { Decision::ReplaceWithIncoming } else { Decision::KeepExisting };
    }
    if case.incoming.timestamp > case.existing.timestamp {
        Decision::ReplaceWithIncoming
    } else {
        Decision::KeepExisting
    }
}

/// Order over input indices produced by a reranker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranking {
    pub order: Vec<usize>,
    /// Set when the backend's output could not be used and the lexical
    /// ordering was substituted.
    pub fallback: Option<String>,
}

pub trait Annotator: Send + Sync {
    fn annotate(&self, text: &str) -> Result<Vec<EntityAnnotation>, BackendError>;
}

/// Draws `config.n_samples` independent completions for one prompt.
pub trait Sampler: Send + Sync {
    fn sample(&self, prompt: &str, config: &SamplerConfig) -> Result<Vec<String>, BackendError>;
}

pub trait Arbiter: Send + Sync {
    fn arbitrate(&self, case: &ArbitrationCase, config: &SamplerConfig) -> ArbitrationOutcome;
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Embedding, BackendError>;
}

pub trait Reranker: Send + Sync {
    fn rerank(&self, question: &str, triples: &[String], config: &SamplerConfig) -> Result<Ranking, BackendError>;
}

/// The full set of capabilities a pipeline run needs.
#[derive(Clone)]
pub struct Backends {
    pub annotator: Arc<dyn Annotator>,
    pub sampler: Arc<dyn Sampler>,
    pub arbiter: Arc<dyn Arbiter>,
    pub embedder: Arc<dyn Embedder>,
    pub reranker: Arc<dyn Reranker>,
    /// Generates final answers for retrieval-augmented QA.
    pub answerer: Arc<dyn Sampler>,
}

impl Backends {
    /// Offline backends: dictionary annotation, scripted sampling, policy
    /// arbitration, hashed embeddings and lexical reranking.
    pub fn offline(annotator: mock::DictionaryAnnotator, sampler: mock::ScriptedSampler, seed: u64) -> Self {
        Backends {
            annotator: Arc::new(annotator),
            sampler: Arc::new(sampler),
            arbiter: Arc::new(mock::PolicyArbiter),
            embedder: Arc::new(mock::HashEmbedder::new(seed)),
            reranker: Arc::new(mock::LexicalReranker),
            answerer: Arc::new(mock::ScriptedSampler::default()),
        }
    }
}
