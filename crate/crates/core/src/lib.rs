//! Incremental construction, querying and evaluation of a temporally
//! evolving biomedical knowledge graph built from dated abstracts.

pub mod backends;
pub mod corpus;
pub mod exec;
pub mod extractor;
pub mod inference;
pub mod metrics;
pub mod pipeline;
pub mod retrieval;
pub mod schema;
pub mod store;
