//! Prompt templates with `{name}` placeholders.
//!
//! Substitution is a single left-to-right pass, so braces inside substituted
//! values (abstract text, model output) are never re-expanded.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("template `{template}` is missing placeholder {{{placeholder}}}")]
    MissingPlaceholder { template: String, placeholder: String },
    #[error("cannot read template {path}: {reason}")]
    Read { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    name: String,
    text: String,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        PromptTemplate { name: name.into(), text: text.into() }
    }

    pub fn from_file(name: &str, path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|e| TemplateError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Ok(PromptTemplate::new(name, text))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Names of all `{identifier}` placeholders in the template.
    pub fn placeholders(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if is_ident(&after[..close]) => {
                    out.insert(after[..close].to_string());
                    rest = &after[close + 1..];
                }
                _ => rest = after,
            }
        }
        out
    }

    pub fn require(&self, names: &[&str]) -> Result<(), TemplateError> {
        let present = self.placeholders();
        for name in names {
            if !present.contains(*name) {
                return Err(TemplateError::MissingPlaceholder {
                    template: self.name.clone(),
                    placeholder: (*name).to_string(),
                });
            }
        }
        Ok(())
    }

    /// Fills placeholders from `vars`. Unknown placeholders are left as-is.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.text.len() + vars.iter().map(|(_, v)| v.len()).sum::<usize>());
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let replaced = after.find('}').and_then(|close| {
                let key = &after[..close];
                vars.iter().find(|(k, _)| *k == key).map(|(_, v)| (close, *v))
            });
            match replaced {
                Some((close, value)) => {
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub const EXTRACTION: &str = "\
You are a biomedical relation extraction assistant.

Abstract:
{abstract}

Annotated entities (identifier | type | mentions):
{entities}

Relation types (name | directionality | allowed entity types | definition):
{relations}

Identify every relation between pairs of the annotated entities that the abstract supports. \
Write one triple per line exactly in the form (head_identifier | Relation_Name | tail_identifier), \
using only the identifiers listed above, only the relation names above, and only their allowed \
entity-type combinations. Write nothing else.
";

pub const ARBITRATION: &str = "\
Two conflicting relations were extracted for the same pair of biomedical entities.
Head entity: {head}
Tail entity: {tail}

Existing relation: {existing_relation} (confidence {existing_confidence}, last reported {existing_timestamp})
Incoming relation: {incoming_relation} (confidence {incoming_confidence}, reported {incoming_timestamp})

Only one relation can be kept for this pair. Considering the confidence scores, the recency of \
the evidence and your biomedical knowledge, decide which relation is more appropriate. \
Answer with exactly one word: KEEP to retain the existing relation, or REPLACE to adopt the incoming relation.
";

pub const RERANK: &str = "\
Question:
{question}

Candidate knowledge triples:
{triples}

Rank the triples by their relevance to the question. Return every triple index exactly once, \
most relevant first, as a comma-separated list of indices and nothing else.
";

pub const ANSWER: &str = "\
Answer the biomedical question using the knowledge graph evidence when it is relevant.

Question:
{question}

Options:
{options}

Evidence:
{evidence}

Reply with the letter of the correct option (or yes, no, or maybe) first, followed by a brief justification.
";

/// The four prompts the pipeline renders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Templates {
    pub extraction: PromptTemplate,
    pub arbitration: PromptTemplate,
    pub rerank: PromptTemplate,
    pub answer: PromptTemplate,
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            extraction: PromptTemplate::new("extraction", EXTRACTION),
            arbitration: PromptTemplate::new("arbitration", ARBITRATION),
            rerank: PromptTemplate::new("rerank", RERANK),
            answer: PromptTemplate::new("answer", ANSWER),
        }
    }
}

impl Templates {
    pub fn validate(&self) -> Result<(), TemplateError> {
        self.extraction.require(&["abstract", "entities", "relations"])?;
        self.arbitration.require(&[
            "head",
            "tail",
            "existing_relation",
            "existing_confidence",
            "existing_timestamp",
            "incoming_relation",
            "incoming_confidence",
            "incoming_timestamp",
        ])?;
        self.rerank.require(&["question", "triples"])?;
        self.answer.require(&["question", "evidence"])?;
        Ok(())
    }
}
