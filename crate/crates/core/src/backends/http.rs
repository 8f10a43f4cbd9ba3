//! Remote backends over HTTP.
//!
//! [`ChatClient`] speaks a chat-completion JSON protocol (`model`, `messages`,
//! `temperature`, `n`) and implements sampling, arbitration and reranking.
//! In-flight requests are bounded by a client-wide permit pool; transient
//! failures (transport errors, 408, 429, 5xx) are retried with exponential
//! backoff.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::{json, Value};

use super::mock::{is_permutation, lexical_order};
use super::{
    fallback_decision, Annotator, Arbiter, ArbitrationCase, ArbitrationOutcome, BackendError, Decision,
    DecisionSource, Embedder, Embedding, EntityAnnotation, Ranking, Reranker, Sampler, SamplerConfig, Templates,
};
use crate::schema::EntityType;

#[derive(Debug)]
struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Permits { available: Mutex::new(n.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.freed.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatClientConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub concurrency: usize,
    pub backoff: Duration,
}

impl ChatClientConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        ChatClientConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            concurrency: 8,
            backoff: Duration::from_millis(250),
        }
    }
}

fn is_retryable(status: StatusCode) -> bool {
    matches!(status.as_u16(), 408 | 429 | 500 | 502 | 503 | 504)
}

enum Attempt {
    Done(Result<Value, BackendError>),
    Retry(String),
}

/// POSTs `body` and returns the parsed JSON response, retrying transient
/// failures up to `max_retries` times.
fn post_json(
    http: &Client,
    endpoint: &str,
    api_key: Option<&str>,
    body: &Value,
    timeout: Duration,
    max_retries: u32,
    backoff: Duration,
) -> Result<Value, BackendError> {
    let mut last = String::new();
    for attempt in 0..=max_retries {
        if attempt > 0 {
            std::thread::sleep(backoff * 2u32.saturating_pow(attempt - 1));
        }
        let mut req = http.post(endpoint).timeout(timeout).json(body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        let outcome = match req.send() {
            Err(e) => Attempt::Retry(format!("request failed: {e}")),
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    Attempt::Done(
                        resp.json::<Value>().map_err(|e| BackendError::InvalidResponse(format!("bad JSON body: {e}"))),
                    )
                } else if is_retryable(status) {
                    Attempt::Retry(format!("HTTP {status}"))
                } else {
                    let text = resp.text().unwrap_or_default();
                    Attempt::Done(Err(BackendError::Transport(format!("HTTP {status}: {text}"))))
                }
            }
        };
        match outcome {
            Attempt::Done(r) => return r,
            Attempt::Retry(reason) => {
                log::debug!("{endpoint}: attempt {} failed: {reason}", attempt + 1);
                last = reason;
            }
        }
    }
    Err(BackendError::Transport(format!("{endpoint}: giving up after {} attempts: {last}", max_retries + 1)))
}

/// Chat-completion client. Cheap to clone; clones share the permit pool.
#[derive(Clone)]
pub struct ChatClient {
    config: ChatClientConfig,
    templates: Templates,
    http: Client,
    permits: Arc<Permits>,
}

impl ChatClient {
    pub fn new(config: ChatClientConfig, templates: Templates) -> Result<Self, BackendError> {
        if config.endpoint.is_empty() {
            return Err(BackendError::Config("chat endpoint is empty".into()));
        }
        let http = Client::builder().build().map_err(|e| BackendError::Config(e.to_string()))?;
        let permits = Arc::new(Permits::new(config.concurrency));
        Ok(ChatClient { config, templates, http, permits })
    }

    /// One completion at the given temperature.
    pub fn complete(&self, prompt: &str, temperature: f64, sampler: &SamplerConfig) -> Result<String, BackendError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "n": 1,
        });
        let _permit = self.permits.acquire();
        let value = post_json(
            &self.http,
            &self.config.endpoint,
            self.config.api_key.as_deref(),
            &body,
            sampler.timeout,
            sampler.max_retries,
            self.config.backoff,
        )?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::InvalidResponse("missing choices[0].message.content".into()))
    }
}

impl Sampler for ChatClient {
    /// Issues `n_samples` independent requests. A sample that still fails
    /// after retries becomes an empty output; if every sample fails the call
    /// fails.
    fn sample(&self, prompt: &str, config: &SamplerConfig) -> Result<Vec<String>, BackendError> {
        config.validate()?;
        let n = config.n_samples;
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<String, BackendError>>>> = Mutex::new(vec![None; n]);
        let workers = self.config.concurrency.clamp(1, n);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let r = self.complete(prompt, config.temperature, config);
                    results.lock().unwrap()[i] = Some(r);
                });
            }
        });
        let results = results.into_inner().unwrap();
        let mut failures = 0;
        let mut last_err = None;
        let mut outputs = Vec::with_capacity(n);
        for r in results.into_iter().map(|r| r.expect("every sample slot is filled")) {
            match r {
                Ok(text) => outputs.push(text),
                Err(e) => {
                    log::warn!("sample failed, recorded as empty output: {e}");
                    failures += 1;
                    last_err = Some(e);
                    outputs.push(String::new());
                }
            }
        }
        match last_err {
            Some(e) if failures == n => Err(BackendError::Transport(format!("all {n} samples failed; last error: {e}"))),
            _ => Ok(outputs),
        }
    }
}

/// Reads KEEP or REPLACE from a model verdict; anything else is unparseable.
pub fn parse_verdict(reply: &str) -> Option<Decision> {
    let words: Vec<String> = reply
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_uppercase)
        .collect();
    let keep = words.iter().any(|w| w == "KEEP");
    let replace = words.iter().any(|w| w == "REPLACE");
    match (keep, replace) {
        (true, false) => Some(Decision::KeepExisting),
        (false, true) => Some(Decision::ReplaceWithIncoming),
        _ => None,
    }
}

pub fn render_arbitration(templates: &Templates, case: &ArbitrationCase) -> String {
    let f = |x: f64| format!("{x:.4}");
    templates.arbitration.render(&[
        ("head", &format!("{} ({})", case.head.name, case.head.identifier)),
        ("tail", &format!("{} ({})", case.tail.name, case.tail.identifier)),
        ("existing_relation", case.existing.relation.name()),
        ("existing_confidence", &f(case.existing.confidence)),
        ("existing_timestamp", &case.existing.timestamp.to_string()),
        ("incoming_relation", case.incoming.relation.name()),
        ("incoming_confidence", &f(case.incoming.confidence)),
        ("incoming_timestamp", &case.incoming.timestamp.to_string()),
    ])
}

impl Arbiter for ChatClient {
    fn arbitrate(&self, case: &ArbitrationCase, config: &SamplerConfig) -> ArbitrationOutcome {
        let prompt = render_arbitration(&self.templates, case);
        let fallback = |reason: String| ArbitrationOutcome {
            decision: fallback_decision(case),
            source: DecisionSource::Fallback(reason),
        };
        match self.complete(&prompt, config.temperature, config) {
            Ok(reply) => match parse_verdict(&reply) {
                Some(decision) => ArbitrationOutcome { decision, source: DecisionSource::Model },
                None => fallback(format!("unparseable verdict: {}", reply.trim())),
            },
            Err(e) => fallback(e.to_string()),
        }
    }
}

/// Reads a ranking from model output: integers in order of appearance,
/// first occurrence wins. Indices the model omitted are appended in lexical
/// order. Returns `None` when no usable index is present or one is out of range.
pub fn parse_ranking(reply: &str, question: &str, triples: &[String]) -> Option<(Vec<usize>, bool)> {
    let n = triples.len();
    let mut seen = vec![false; n];
    let mut order = Vec::new();
    for tok in reply.split(|c: char| !c.is_ascii_digit()).filter(|t| !t.is_empty()) {
        let i: usize = tok.parse().ok()?;
        if i >= n {
            return None;
        }
        if !std::mem::replace(&mut seen[i], true) {
            order.push(i);
        }
    }
    if order.is_empty() {
        return None;
    }
    let complete = order.len() == n;
    order.extend(lexical_order(question, triples).into_iter().filter(|i| !seen[*i]));
    debug_assert!(is_permutation(&order, n));
    Some((order, complete))
}

impl Reranker for ChatClient {
    fn rerank(&self, question: &str, triples: &[String], config: &SamplerConfig) -> Result<Ranking, BackendError> {
        if triples.is_empty() {
            return Err(BackendError::InvalidInput("nothing to rerank".into()));
        }
        if triples.len() == 1 {
            return Ok(Ranking { order: vec![0], fallback: None });
        }
        let listing: Vec<String> = triples.iter().enumerate().map(|(i, t)| format!("[{i}] {t}")).collect();
        let prompt = self.templates.rerank.render(&[("question", question), ("triples", &listing.join("\n"))]);
        let fallback = |reason: String| Ranking { order: lexical_order(question, triples), fallback: Some(reason) };
        Ok(match self.complete(&prompt, config.temperature, config) {
            Ok(reply) => match parse_ranking(&reply, question, triples) {
                Some((order, true)) => Ranking { order, fallback: None },
                Some((order, false)) => Ranking { order, fallback: Some("partial ranking completed lexically".into()) },
                None => fallback(format!("unparseable ranking: {}", reply.trim())),
            },
            Err(e) => fallback(e.to_string()),
        })
    }
}

/// Embedding service client: `{model, input}` → `{data: [{embedding: [...]}]}`.
#[derive(Clone)]
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    sampler: SamplerConfig,
    http: Client,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>, sampler: SamplerConfig) -> Result<Self, BackendError> {
        let http = Client::builder().build().map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(HttpEmbedder { endpoint: endpoint.into(), model: model.into(), api_key, sampler, http })
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::InvalidInput("cannot embed empty text".into()));
        }
        let body = json!({"model": self.model, "input": text});
        let value = post_json(
            &self.http,
            &self.endpoint,
            self.api_key.as_deref(),
            &body,
            self.sampler.timeout,
            self.sampler.max_retries,
            Duration::from_millis(100),
        )?;
        let raw = value
            .pointer("/data/0/embedding")
            .ok_or_else(|| BackendError::InvalidResponse("missing data[0].embedding".into()))?;
        let values: Vec<f64> = serde_json::from_value(raw.clone()).map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
        Embedding::new(values)
    }
}

#[derive(Deserialize)]
struct RemoteAnnotation {
    mention: String,
    #[serde(rename = "type")]
    entity_type: EntityType,
    identifier: String,
    terminology: Option<String>,
    start: usize,
    end: usize,
}

#[derive(Deserialize)]
struct RemoteAnnotations {
    annotations: Vec<RemoteAnnotation>,
}

/// Thin client for an annotation service: `{text}` →
/// `{annotations: [{mention, type, identifier, terminology?, start, end}]}`.
#[derive(Clone)]
pub struct HttpAnnotator {
    endpoint: String,
    sampler: SamplerConfig,
    http: Client,
}

impl HttpAnnotator {
    pub fn new(endpoint: impl Into<String>, sampler: SamplerConfig) -> Result<Self, BackendError> {
        let http = Client::builder().build().map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(HttpAnnotator { endpoint: endpoint.into(), sampler, http })
    }
}

impl Annotator for HttpAnnotator {
    fn annotate(&self, text: &str) -> Result<Vec<EntityAnnotation>, BackendError> {
        let value = post_json(
            &self.http,
            &self.endpoint,
            None,
            &json!({"text": text}),
            self.sampler.timeout,
            self.sampler.max_retries,
            Duration::from_millis(100),
        )?;
        let parsed: RemoteAnnotations =
            serde_json::from_value(value).map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
        parsed
            .annotations
            .into_iter()
            .map(|a| {
                let ann = EntityAnnotation {
                    terminology: a.terminology.unwrap_or_else(|| a.entity_type.default_terminology().to_string()),
                    mention: a.mention,
                    entity_type: a.entity_type,
                    identifier: a.identifier,
                    span: (a.start, a.end),
                };
                ann.validate(text).map(|_| ann)
            })
            .collect()
    }
}
