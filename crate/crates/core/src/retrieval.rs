//! Question answering over the graph: link question entities to nodes, pull
//! their one-hop neighborhoods, rerank, and prompt the answer model.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Backends, Embedder, PromptTemplate, Reranker, SamplerConfig, TemplateError, Templates};
use crate::exec::Execution;
use crate::schema::RelationType;
use crate::store::{pair_key, Graph, PairKey};

pub const DEFAULT_TOP_K: usize = 5;
pub const NO_EVIDENCE: &str = "No relevant evidence was found in the knowledge graph.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Annotate,
    Link,
    Rerank,
    Prompt,
    Answer,
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("{stage:?} stage: {source}")]
    Backend {
        stage: Stage,
        #[source]
        source: BackendError,
    },
    #[error("prompt stage: {0}")]
    Template(#[from] TemplateError),
    #[error("k must be at least 1")]
    ZeroK,
}

fn at(stage: Stage) -> impl Fn(BackendError) -> RetrievalError {
    move |source| RetrievalError::Backend { stage, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkMethod {
    Identifier,
    ExactKeyword,
    EmbeddingSimilarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedEntity {
    pub query_mention: String,
    pub node_id: String,
    pub link_method: LinkMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
}

/// Links a mention to a node: by identifier, then by exact lowercase
/// keyword, then by highest embedding cosine. Ties go to the smallest
/// identifier. `min_similarity` turns weak embedding links into `None`.
pub fn link_entity(
    graph: &Graph,
    mention: &str,
    identifier: Option<&str>,
    embedder: &dyn Embedder,
    min_similarity: Option<f64>,
) -> Result<Option<LinkedEntity>, BackendError> {
    if mention.trim().is_empty() {
        return Err(BackendError::InvalidInput("empty mention".into()));
    }
    let linked = |node_id: &str, link_method, similarity| LinkedEntity {
        query_mention: mention.to_string(),
        node_id: node_id.to_string(),
        link_method,
        similarity,
    };
    if let Some(node) = identifier.and_then(|id| graph.node(id)) {
        return Ok(Some(linked(&node.identifier, LinkMethod::Identifier, None)));
    }
    if let Some(node) = graph.nodes_with_keyword(&mention.to_lowercase()).next() {
        return Ok(Some(linked(&node.identifier, LinkMethod::ExactKeyword, None)));
    }
    if graph.node_count() == 0 {
        return Ok(None);
    }
    let query = embedder.embed(mention)?;
    let mut best: Option<(&str, f64)> = None;
    for node in graph.nodes() {
        let sim = query.cosine(&node.embedding);
        if best.is_none_or(|(_, b)| sim > b) {
            best = Some((&node.identifier, sim));
        }
    }
    let (id, sim) = best.expect("graph has nodes");
    if min_similarity.is_some_and(|floor| sim < floor) {
        return Ok(None);
    }
    Ok(Some(linked(id, LinkMethod::EmbeddingSimilarity, Some(sim))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphTriple {
    pub head: String,
    pub head_name: String,
    pub relation: RelationType,
    pub tail: String,
    pub tail_name: String,
    pub confidence: f64,
    /// The linked node whose neighborhood contributed this triple first.
    pub origin: String,
}

impl SubgraphTriple {
    /// `head —relation→ tail (confidence)`
    pub fn render(&self) -> String {
        format!("{} —{}→ {} ({:.2})", self.head_name, self.relation, self.tail_name, self.confidence)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSubgraph {
    pub triples: Vec<SubgraphTriple>,
}

impl EvidenceSubgraph {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// Union of the one-hop neighborhoods of the linked nodes, each edge once.
pub fn build_subgraph(graph: &Graph, linked: &[LinkedEntity]) -> EvidenceSubgraph {
    let mut seen: BTreeSet<PairKey> = BTreeSet::new();
    let mut triples = Vec::new();
    for seed in linked {
        let Ok(neighbors) = graph.neighbors(&seed.node_id) else { continue };
        for (edge, _) in neighbors {
            if !seen.insert(pair_key(&edge.head, &edge.tail)) {
                continue;
            }
            let name = |id: &str| graph.node(id).map(|n| n.name.clone()).unwrap_or_else(|| id.to_string());
            triples.push(SubgraphTriple {
                head: edge.head.clone(),
                head_name: name(&edge.head),
                relation: edge.relation,
                tail: edge.tail.clone(),
                tail_name: name(&edge.tail),
                confidence: edge.confidence,
                origin: seed.node_id.clone(),
            });
        }
    }
    EvidenceSubgraph { triples }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEvidence {
    pub triples: Vec<SubgraphTriple>,
    pub rendered: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank_fallback: Option<String>,
}

/// The reranker's first min(k, |subgraph|) triples.
pub fn rerank_topk(
    question: &str,
    subgraph: &EvidenceSubgraph,
    reranker: &dyn Reranker,
    config: &SamplerConfig,
    k: usize,
) -> Result<RankedEvidence, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if subgraph.is_empty() {
        return Ok(RankedEvidence { triples: Vec::new(), rendered: Vec::new(), rerank_fallback: None });
    }
    let rendered: Vec<String> = subgraph.triples.iter().map(SubgraphTriple::render).collect();
    let ranking = reranker.rerank(question, &rendered, config).map_err(at(Stage::Rerank))?;
    let top: Vec<usize> = ranking.order.into_iter().take(k).collect();
    Ok(RankedEvidence {
        triples: top.iter().map(|&i| subgraph.triples[i].clone()).collect(),
        rendered: top.iter().map(|&i| rendered[i].clone()).collect(),
        rerank_fallback: ranking.fallback,
    })
}

pub fn render_options(options: &BTreeMap<String, String>) -> String {
    if options.is_empty() {
        return "(open question)".into();
    }
    options.iter().map(|(k, v)| format!("{k}. {v}")).collect::<Vec<_>>().join("\n")
}

/// Fills the answer template. Evidence lines appear in rank order, one per
/// line; no evidence yields an explicit notice instead.
pub fn assemble_answer_prompt(
    question: &str,
    options: &BTreeMap<String, String>,
    topk: &[String],
    template: &PromptTemplate,
) -> Result<String, TemplateError> {
    template.require(&["question", "evidence"])?;
    let evidence = if topk.is_empty() { NO_EVIDENCE.to_string() } else { topk.join("\n") };
    Ok(template.render(&[("question", question), ("options", &render_options(options)), ("evidence", &evidence)]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagConfig {
    pub k: usize,
    pub use_retrieval: bool,
    #[serde(default)]
    pub min_similarity: Option<f64>,
    pub rerank: SamplerConfig,
    pub answer: SamplerConfig,
}

impl Default for RagConfig {
    fn default() -> Self {
        RagConfig {
            k: DEFAULT_TOP_K,
            use_retrieval: true,
            min_similarity: None,
            rerank: SamplerConfig::arbitration(),
            answer: SamplerConfig::arbitration(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub linked: Vec<LinkedEntity>,
    pub evidence: RankedEvidence,
    pub prompt: String,
}

/// Runs the full retrieval-augmented answer pipeline for one question.
pub fn answer(
    question: &str,
    options: &BTreeMap<String, String>,
    graph: &Graph,
    backends: &Backends,
    templates: &Templates,
    config: &RagConfig,
) -> Result<Answer, RetrievalError> {
    let mut linked: Vec<LinkedEntity> = Vec::new();
    let mut evidence = RankedEvidence { triples: Vec::new(), rendered: Vec::new(), rerank_fallback: None };
    if config.use_retrieval {
        for a in backends.annotator.annotate(question).map_err(at(Stage::Annotate))? {
            let link = link_entity(graph, &a.mention, Some(&a.identifier), backends.embedder.as_ref(), config.min_similarity)
                .map_err(at(Stage::Link))?;
            if let Some(l) = link {
                if !linked.iter().any(|x| x.node_id == l.node_id) {
                    linked.push(l);
                }
            }
        }
        let subgraph = build_subgraph(graph, &linked);
        evidence = rerank_topk(question, &subgraph, backends.reranker.as_ref(), &config.rerank, config.k)?;
    }
    let prompt = assemble_answer_prompt(question, options, &evidence.rendered, &templates.answer)?;
    let text = backends
        .answerer
        .sample(&prompt, &config.answer.clone().with_samples(1))
        .map_err(at(Stage::Answer))?
        .into_iter()
        .next()
        .unwrap_or_default();
    Ok(Answer { text, linked, evidence, prompt })
}

/// The first standalone token in `reply` that names an option: an uppercase
/// letter key such as `B`, or a word key such as `yes` in any case.
pub fn parse_option(reply: &str, options: &BTreeMap<String, String>) -> Option<String> {
    reply
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .find_map(|token| {
            options.keys().find(|key| {
                if key.chars().count() == 1 {
                    token == key.as_str()
                } else {
                    token.eq_ignore_ascii_case(key)
                }
            })
        })
        .cloned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub options: BTreeMap<String, String>,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaOutcome {
    pub id: String,
    pub predicted: Option<String>,
    pub gold: String,
    pub correct: bool,
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaReport {
    pub outcomes: Vec<QaOutcome>,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

/// Answers every item; unparseable replies count as incorrect.
pub fn evaluate_qa(
    items: &[QaItem],
    graph: &Graph,
    backends: &Backends,
    templates: &Templates,
    config: &RagConfig,
    exec: Execution,
) -> Result<QaReport, RetrievalError> {
    let results = exec.map(items, |item| {
        answer(&item.question, &item.options, graph, backends, templates, config).map(|a| {
            let predicted = parse_option(&a.text, &item.options);
            QaOutcome {
                id: item.id.clone(),
                correct: predicted.as_deref() == Some(item.answer.as_str()),
                predicted,
                gold: item.answer.clone(),
                evidence: a.evidence.rendered,
            }
        })
    });
    let outcomes: Vec<QaOutcome> = results.into_iter().collect::<Result<_, _>>()?;
    let correct = outcomes.iter().filter(|o| o.correct).count();
    let total = outcomes.len();
    let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
    Ok(QaReport { outcomes, correct, total, accuracy })
}
