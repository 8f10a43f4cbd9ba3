mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use common::*;
use tkg_core::backends::mock::{DictionaryAnnotator, DictionaryEntry, HashEmbedder, PolicyArbiter, ScriptedReranker, ScriptedSampler};
use tkg_core::backends::{Backends, Embedder, SamplerConfig, Templates};
use tkg_core::exec::Execution;
use tkg_core::retrieval::{
    answer, assemble_answer_prompt, build_subgraph, evaluate_qa, link_entity, parse_option, rerank_topk, LinkMethod,
    QaItem, RagConfig, RetrievalError, NO_EVIDENCE,
};
use tkg_core::schema::{EntityType, RelationType};
use tkg_core::store::{construct, Graph, Node};

fn nppa_graph() -> Graph {
    let nppa = entity_with_mentions("NPPA", EntityType::Gene, "4878", &["ANP", "atrial NP", "NPPA"]);
    let water = entity("Water", EntityType::Chemical, "D014867");
    let sodium = entity("Sodium", EntityType::Chemical, "D012964");
    let heart = entity("Heart Failure", EntityType::Disease, "D006333");
    let stream = [
        candidate(&nppa, RelationType::NegativeCorrelate, &water, 0.97, 1, "2000-01-01"),
        candidate(&nppa, RelationType::Associate, &sodium, 0.8, 2, "2000-02-01"),
        candidate(&nppa, RelationType::PositiveCorrelate, &heart, 0.9, 3, "2000-03-01"),
        candidate(&sodium, RelationType::Associate, &heart, 0.7, 4, "2000-04-01"),
    ];
    let mut g = Graph::new();
    construct(&mut g, &stream, &PolicyArbiter, &arbitration()).unwrap();
    g.upsert_node(Node::from(&entity("Island", EntityType::Species, "9999")));
    g
}

#[test]
fn linking_tiers() {
    let g = nppa_graph();
    let emb = HashEmbedder::new(1);
    let l = link_entity(&g, "ANP", None, &emb, None).unwrap().unwrap();
    assert_eq!((l.node_id.as_str(), l.link_method), ("4878", LinkMethod::ExactKeyword));
    let l = link_entity(&g, "some other surface form", Some("4878"), &emb, None).unwrap().unwrap();
    assert_eq!(l.link_method, LinkMethod::Identifier);

    let mention = "natriuretic peptide A";
    let l = link_entity(&g, mention, None, &emb, None).unwrap().unwrap();
    assert_eq!(l.link_method, LinkMethod::EmbeddingSimilarity);
    let q = emb.embed(mention).unwrap();
    let best = g.nodes().map(|n| q.cosine(&n.embedding)).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(l.similarity, Some(best));
    assert_eq!(q.cosine(&g.node(&l.node_id).unwrap().embedding), best);

    assert!(link_entity(&g, mention, None, &emb, Some(1.01)).unwrap().is_none());
    assert!(link_entity(&Graph::new(), mention, None, &emb, None).unwrap().is_none());
}

#[test]
fn subgraph_union_and_rendering() {
    let g = nppa_graph();
    let emb = HashEmbedder::new(1);
    let nppa = link_entity(&g, "nppa", None, &emb, None).unwrap().unwrap();
    let sodium = link_entity(&g, "x", Some("D012964"), &emb, None).unwrap().unwrap();
    let island = link_entity(&g, "x", Some("9999"), &emb, None).unwrap().unwrap();
    assert_eq!(build_subgraph(&g, std::slice::from_ref(&nppa)).len(), 3);
    // NPPA–Sodium is shared and appears once.
    assert_eq!(build_subgraph(&g, &[nppa.clone(), sodium]).len(), 4);
    assert!(build_subgraph(&g, &[island]).is_empty());
    let sub = build_subgraph(&g, &[nppa]);
    assert!(sub.triples.iter().any(|t| t.render() == "NPPA —Negative_Correlate→ Water (0.97)"));
}

#[test]
fn topk_and_prompt_assembly() {
    let g = nppa_graph();
    let emb = HashEmbedder::new(1);
    let nppa = link_entity(&g, "nppa", None, &emb, None).unwrap().unwrap();
    let sub = build_subgraph(&g, &[nppa]);
    let cfg = SamplerConfig::arbitration();
    let all = rerank_topk("water", &sub, &ScriptedReranker { order: vec![2, 0, 1] }, &cfg, 5).unwrap();
    assert_eq!(all.triples.len(), 3);
    assert_eq!(all.triples[0], sub.triples[2]);
    assert!(matches!(rerank_topk("q", &sub, &ScriptedReranker { order: vec![0] }, &cfg, 0), Err(RetrievalError::ZeroK)));

    let t = Templates::default();
    let options = BTreeMap::from([("A".to_string(), "yes".to_string()), ("B".to_string(), "no".to_string())]);
    let empty = assemble_answer_prompt("Q?", &options, &[], &t.answer).unwrap();
    assert!(empty.contains(NO_EVIDENCE));
    let five: Vec<String> = (0..5).map(|i| format!("E{i} —Associate→ F (0.80)")).collect();
    let p = assemble_answer_prompt("Q?", &options, &five, &t.answer).unwrap();
    assert_eq!(p, assemble_answer_prompt("Q?", &options, &five, &t.answer).unwrap());
    assert_eq!(p.lines().filter(|l| l.contains("—Associate→")).count(), 5);
}

#[test]
fn option_parsing() {
    let letters: BTreeMap<String, String> = ["A", "B", "C", "D"].iter().map(|k| (k.to_string(), format!("opt {k}"))).collect();
    assert_eq!(parse_option("B. tocilizumab", &letters).as_deref(), Some("B"));
    assert_eq!(parse_option("The answer is C", &letters).as_deref(), Some("C"));
    assert_eq!(parse_option("no idea", &letters), None);
    let words: BTreeMap<String, String> = [("yes", ""), ("no", "")].iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    assert_eq!(parse_option("Yes, it does.", &words).as_deref(), Some("yes"));
}

#[test]
fn answers_are_deterministic_and_use_evidence() {
    let g = nppa_graph();
    let dict = DictionaryAnnotator::new(vec![
        DictionaryEntry::new("NPPA", EntityType::Gene, "4878"),
        DictionaryEntry::new("Island", EntityType::Species, "9999"),
    ])
    .unwrap();
    let mut backends = Backends::offline(dict, ScriptedSampler::default(), 2);
    backends.answerer = Arc::new(ScriptedSampler::constant("A"));
    let t = Templates::default();
    let cfg = RagConfig::default();
    let options = BTreeMap::from([("A".to_string(), "Water".to_string()), ("B".to_string(), "Glucose".to_string())]);
    let q = "Which chemical does NPPA correlate with?";
    let a = answer(q, &options, &g, &backends, &t, &cfg).unwrap();
    assert_eq!(a, answer(q, &options, &g, &backends, &t, &cfg).unwrap());
    assert_eq!(a.linked.len(), 1);
    assert_eq!(a.evidence.rendered.len(), 3);
    assert_eq!(parse_option(&a.text, &options).as_deref(), Some("A"));

    let lonely = answer("What lives on Island?", &options, &g, &backends, &t, &cfg).unwrap();
    assert!(lonely.evidence.rendered.is_empty());
    assert!(lonely.prompt.contains(NO_EVIDENCE));

    let items = vec![
        QaItem { id: "1".into(), question: q.into(), options: options.clone(), answer: "A".into() },
        QaItem { id: "2".into(), question: q.into(), options, answer: "B".into() },
    ];
    let report = evaluate_qa(&items, &g, &backends, &t, &cfg, Execution::default()).unwrap();
    assert_eq!((report.correct, report.total), (1, 2));
    assert_eq!(report.accuracy, 0.5);
    assert_eq!(report.outcomes[1].predicted.as_deref(), Some("A"));
}
