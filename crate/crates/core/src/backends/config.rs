//! Backend selection from configuration.
//!
//! ```toml
//! [backends]
//! api_key_env = "TKG_API_KEY"
//!
//! [backends.chat]
//! endpoint = "http://localhost:8000/v1/chat/completions"
//! model = "qwen2.5-32b-instruct"
//! timeout_ms = 60000
//! max_retries = 3
//! concurrency = 16
//!
//! [backends.annotator]
//! kind = "dictionary"
//! path = "dictionary.jsonl"
//!
//! [backends.sampler]
//! kind = "http"
//!
//! [backends.arbiter]
//! kind = "http"
//!
//! [backends.embedder]
//! kind = "hash"
//!
//! [backends.reranker]
//! kind = "lexical"
//! ```
//!
//! Relative paths resolve against the directory of the config file. The API
//! credential is read from the environment variable named by `api_key_env`.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::http::{ChatClient, ChatClientConfig, HttpAnnotator, HttpEmbedder};
use super::mock::{
    DictionaryAnnotator, HashEmbedder, LexicalReranker, PolicyArbiter, ScriptedArbiter, ScriptedReranker,
    ScriptedSampler,
};
use super::{Backends, BackendError, Decision, PromptTemplate, SamplerConfig, Templates};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnnotatorKind {
    Dictionary { path: PathBuf },
    Http { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerKind {
    /// Replays a sampler script; with no path every prompt yields empty outputs.
    Scripted {
        #[serde(default)]
        path: Option<PathBuf>,
    },
    Constant { reply: String },
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArbiterKind {
    Policy,
    Scripted { decision: Decision },
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderKind {
    Hash,
    Http { endpoint: String, model: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RerankerKind {
    Lexical,
    Scripted { order: Vec<usize> },
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatSettings {
    pub endpoint: String,
    pub model: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub concurrency: usize,
    pub backoff_ms: u64,
}

impl Default for ChatSettings {
    fn default() -> Self {
        ChatSettings {
            endpoint: String::new(),
            model: String::new(),
            timeout_ms: 60_000,
            max_retries: 3,
            concurrency: 8,
            backoff_ms: 250,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplatePaths {
    pub extraction: Option<PathBuf>,
    pub arbitration: Option<PathBuf>,
    pub rerank: Option<PathBuf>,
    pub answer: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub api_key_env: String,
    pub chat: ChatSettings,
    pub annotator: Option<AnnotatorKind>,
    pub sampler: SamplerKind,
    pub arbiter: ArbiterKind,
    pub embedder: EmbedderKind,
    pub reranker: RerankerKind,
    pub answerer: SamplerKind,
    pub templates: TemplatePaths,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            api_key_env: "TKG_API_KEY".into(),
            chat: ChatSettings::default(),
            annotator: None,
            sampler: SamplerKind::Scripted { path: None },
            arbiter: ArbiterKind::Policy,
            embedder: EmbedderKind::Hash,
            reranker: RerankerKind::Lexical,
            answerer: SamplerKind::Scripted { path: None },
            templates: TemplatePaths::default(),
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn open(base: &Path, p: &Path) -> Result<BufReader<File>, BackendError> {
    let path = resolve(base, p);
    File::open(&path)
        .map(BufReader::new)
        .map_err(|e| BackendError::Config(format!("cannot open {}: {e}", path.display())))
}

impl BackendConfig {
    pub fn load_templates(&self, base: &Path) -> Result<Templates, BackendError> {
        let mut t = Templates::default();
        let slots: [(&str, &Option<PathBuf>, &mut PromptTemplate); 4] = [
            ("extraction", &self.templates.extraction, &mut t.extraction),
            ("arbitration", &self.templates.arbitration, &mut t.arbitration),
            ("rerank", &self.templates.rerank, &mut t.rerank),
            ("answer", &self.templates.answer, &mut t.answer),
        ];
        for (name, path, slot) in slots {
            if let Some(p) = path {
                *slot = PromptTemplate::from_file(name, &resolve(base, p)).map_err(|e| BackendError::Config(e.to_string()))?;
            }
        }
        t.validate().map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(t)
    }

    pub fn sampler_defaults(&self) -> SamplerConfig {
        SamplerConfig {
            timeout: Duration::from_millis(self.chat.timeout_ms),
            max_retries: self.chat.max_retries,
            ..SamplerConfig::extraction()
        }
    }

    fn chat_client(&self, templates: &Templates, cache: &mut Option<ChatClient>) -> Result<ChatClient, BackendError> {
        if let Some(c) = cache {
            return Ok(c.clone());
        }
        if self.chat.endpoint.is_empty() || self.chat.model.is_empty() {
            return Err(BackendError::Config("an http backend needs [backends.chat] endpoint and model".into()));
        }
        let mut cfg = ChatClientConfig::new(&self.chat.endpoint, &self.chat.model);
        cfg.api_key = std::env::var(&self.api_key_env).ok();
        cfg.concurrency = self.chat.concurrency;
        cfg.backoff = Duration::from_millis(self.chat.backoff_ms);
        let client = ChatClient::new(cfg, templates.clone())?;
        *cache = Some(client.clone());
        Ok(client)
    }

    fn build_sampler(
        &self,
        kind: &SamplerKind,
        base: &Path,
        seed: u64,
        templates: &Templates,
        chat: &mut Option<ChatClient>,
    ) -> Result<Arc<dyn super::Sampler>, BackendError> {
        Ok(match kind {
            SamplerKind::Scripted { path: None } => Arc::new(ScriptedSampler::default()),
            SamplerKind::Scripted { path: Some(p) } => Arc::new(ScriptedSampler::from_jsonl(open(base, p)?, seed)?),
            SamplerKind::Constant { reply } => Arc::new(ScriptedSampler::constant(reply.clone())),
            SamplerKind::Http => Arc::new(self.chat_client(templates, chat)?),
        })
    }

    /// Instantiates every backend. `base` anchors relative paths.
    pub fn build(&self, base: &Path, seed: u64) -> Result<(Backends, Templates), BackendError> {
        let templates = self.load_templates(base)?;
        let mut chat = None;
        let annotator: Arc<dyn super::Annotator> = match &self.annotator {
            None => return Err(BackendError::Config("no annotator configured".into())),
            Some(AnnotatorKind::Dictionary { path }) => Arc::new(DictionaryAnnotator::from_jsonl(open(base, path)?)?),
            Some(AnnotatorKind::Http { endpoint }) => Arc::new(HttpAnnotator::new(endpoint, self.sampler_defaults())?),
        };
        let sampler = self.build_sampler(&self.sampler, base, seed, &templates, &mut chat)?;
        let answerer = self.build_sampler(&self.answerer, base, seed, &templates, &mut chat)?;
        let arbiter: Arc<dyn super::Arbiter> = match &self.arbiter {
            ArbiterKind::Policy => Arc::new(PolicyArbiter),
            ArbiterKind::Scripted { decision } => Arc::new(ScriptedArbiter(*decision)),
            ArbiterKind::Http => Arc::new(self.chat_client(&templates, &mut chat)?),
        };
        let embedder: Arc<dyn super::Embedder> = match &self.embedder {
            EmbedderKind::Hash => Arc::new(HashEmbedder::new(seed)),
            EmbedderKind::Http { endpoint, model } => Arc::new(HttpEmbedder::new(
                endpoint,
                model,
                std::env::var(&self.api_key_env).ok(),
                self.sampler_defaults(),
            )?),
        };
        let reranker: Arc<dyn super::Reranker> = match &self.reranker {
            RerankerKind::Lexical => Arc::new(LexicalReranker),
            RerankerKind::Scripted { order } => Arc::new(ScriptedReranker { order: order.clone() }),
            RerankerKind::Http => Arc::new(self.chat_client(&templates, &mut chat)?),
        };
        Ok((Backends { annotator, sampler, arbiter, embedder, reranker, answerer }, templates))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_keys() {
        let cfg: BackendConfig = toml::from_str(
            r#"
            api_key_env = "MY_KEY"
            [chat]
            endpoint = "http://127.0.0.1:9/v1/chat/completions"
            model = "m"
            timeout_ms = 1000
            max_retries = 1
            concurrency = 4
            [annotator]
            kind = "dictionary"
            path = "dict.jsonl"
            [sampler]
            kind = "http"
            [arbiter]
            kind = "scripted"
            decision = "ReplaceWithIncoming"
            [embedder]
            kind = "hash"
            [reranker]
            kind = "scripted"
            order = [1, 0]
            [templates]
            answer = "answer.txt"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.api_key_env, "MY_KEY");
        assert_eq!(cfg.chat.concurrency, 4);
        assert_eq!(cfg.sampler, SamplerKind::Http);
        assert_eq!(cfg.arbiter, ArbiterKind::Scripted { decision: Decision::ReplaceWithIncoming });
        assert_eq!(cfg.sampler_defaults().timeout, Duration::from_millis(1000));
    }

    #[test]
    fn http_without_endpoint_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("d.jsonl"), "{\"alias\":\"NPPA\",\"entity_type\":\"Gene\",\"identifier\":\"4878\"}\n").unwrap();
        let cfg = BackendConfig {
            annotator: Some(AnnotatorKind::Dictionary { path: "d.jsonl".into() }),
            sampler: SamplerKind::Http,
            ..BackendConfig::default()
        };
        assert!(matches!(cfg.build(dir.path(), 0), Err(BackendError::Config(_))));
        let ok = BackendConfig { sampler: SamplerKind::Scripted { path: None }, ..cfg };
        assert!(ok.build(dir.path(), 0).is_ok());
    }

    #[test]
    fn missing_template_placeholder_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "only {question}").unwrap();
        let cfg = BackendConfig {
            templates: TemplatePaths { answer: Some("a.txt".into()), ..Default::default() },
            ..BackendConfig::default()
        };
        let err = cfg.load_templates(dir.path()).unwrap_err();
        assert!(err.to_string().contains("evidence"));
    }
}
