mod common;

use common::*;
use proptest::prelude::*;
use tkg_core::backends::mock::{PolicyArbiter, ScriptedArbiter};
use tkg_core::backends::{Decision, DecisionSource};
use tkg_core::schema::{EntityType, RelationType};
use tkg_core::store::{
    construct, fold_confidence, fuse_confidence, load_snapshot, read_snapshot, save_snapshot, write_snapshot, Graph,
    GraphStats, MergeAction, StoreError,
};

#[test]
fn fusion_examples() {
    assert!((fuse_confidence(0.7, 0.9).unwrap() - 0.97).abs() < 1e-12);
    assert!((fuse_confidence(0.6, 0.6).unwrap() - 0.84).abs() < 1e-12);
    assert!((fuse_confidence(0.42, 0.0).unwrap() - 0.42).abs() < 1e-12);
    assert!(fuse_confidence(1.2, 0.3).is_err());
    assert!(fuse_confidence(f64::NAN, 0.3).is_err());
}

#[test]
fn insert_then_reinforce() {
    let nppa = entity("NPPA", EntityType::Gene, "4878");
    let water = entity("Water", EntityType::Chemical, "D014867");
    let mut g = Graph::new();
    let first = candidate(&nppa, RelationType::NegativeCorrelate, &water, 0.7, 10691132, "1999-12-31");
    assert_eq!(g.upsert(&first, &PolicyArbiter, &arbitration()).unwrap().action, MergeAction::Insert);
    assert_eq!(g.edge_between("4878", "D014867").unwrap().confidence, 0.7);
    let second = candidate(&nppa, RelationType::NegativeCorrelate, &water, 0.9, 10494624, "2000-01-01");
    assert_eq!(g.upsert(&second, &PolicyArbiter, &arbitration()).unwrap().action, MergeAction::Reinforce);
    let e = g.edge_between("D014867", "4878").unwrap();
    assert!((e.confidence - 0.97).abs() < 1e-12);
    assert_eq!(e.pubmed_ids(), [10691132, 10494624]);
    assert_eq!(e.timestamp, date("2000-01-01"));

    // The same abstract cannot support an edge twice.
    let again = candidate(&nppa, RelationType::NegativeCorrelate, &water, 0.9, 10494624, "2000-01-02");
    assert!(matches!(g.upsert(&again, &PolicyArbiter, &arbitration()), Err(StoreError::DuplicateEvidence { .. })));
}

#[test]
fn bidirectional_triples_merge_regardless_of_orientation() {
    let nppa = entity("NPPA", EntityType::Gene, "4878");
    let water = entity("Water", EntityType::Chemical, "D014867");
    let stream = [
        candidate(&water, RelationType::Associate, &nppa, 0.6, 1, "2000-01-01"),
        candidate(&nppa, RelationType::Associate, &water, 0.6, 2, "2000-01-02"),
    ];
    let mut g = Graph::new();
    let summary = construct(&mut g, &stream, &PolicyArbiter, &arbitration()).unwrap();
    assert_eq!((summary.inserted, summary.reinforced), (1, 1));
    let e = g.edge_between("4878", "D014867").unwrap();
    assert_eq!((e.head.as_str(), e.tail.as_str()), ("4878", "D014867"));
}

#[test]
fn conflicts_follow_arbiter_or_policy() {
    let nppa = entity("NPPA", EntityType::Gene, "4878");
    let water = entity("Water", EntityType::Chemical, "D014867");
    let assoc = candidate(&nppa, RelationType::Associate, &water, 0.8, 1, "1999-01-01");
    let neg = candidate(&nppa, RelationType::NegativeCorrelate, &water, 0.7, 10691132, "1999-12-31");

    let mut g = Graph::new();
    g.upsert(&assoc, &PolicyArbiter, &arbitration()).unwrap();
    let out = g.upsert(&neg, &ScriptedArbiter(Decision::ReplaceWithIncoming), &arbitration()).unwrap();
    assert_eq!(out.action, MergeAction::ConflictReplace);
    assert_eq!(out.arbitration.map(|a| a.source), Some(DecisionSource::Scripted));
    let e = g.edge_between("4878", "D014867").unwrap();
    assert_eq!(e.relation, RelationType::NegativeCorrelate);
    assert_eq!((e.confidence, e.pubmed_ids(), e.timestamp), (0.7, vec![10691132], date("1999-12-31")));

    // Policy: higher confidence is kept.
    let mut g = Graph::new();
    let strong = candidate(&nppa, RelationType::Associate, &water, 0.9, 1, "1999-01-01");
    construct(&mut g, &[strong, neg.clone()], &PolicyArbiter, &arbitration()).unwrap();
    assert_eq!(g.edge_between("4878", "D014867").unwrap().relation, RelationType::Associate);
    assert_eq!(g.journal()[1].action, MergeAction::ConflictKeep);

    // Equal confidence: the newer claim wins.
    let mut g = Graph::new();
    let old = candidate(&nppa, RelationType::Associate, &water, 0.8, 1, "1999-01-01");
    let newer = candidate(&nppa, RelationType::PositiveCorrelate, &water, 0.8, 2, "1999-06-01");
    construct(&mut g, &[old, newer], &PolicyArbiter, &arbitration()).unwrap();
    assert_eq!(g.edge_between("4878", "D014867").unwrap().relation, RelationType::PositiveCorrelate);
}

#[test]
fn repeated_claims_close_form() {
    let a = entity("A", EntityType::Gene, "1");
    let b = entity("B", EntityType::Disease, "D1");
    for k in 1..=12u64 {
        let stream: Vec<_> = (1..=k).map(|i| candidate(&a, RelationType::Associate, &b, 0.6, i, "2010-01-01")).collect();
        let mut g = Graph::new();
        construct(&mut g, &stream, &PolicyArbiter, &arbitration()).unwrap();
        let s = g.edge_between("1", "D1").unwrap().confidence;
        assert!((s - (1.0 - 0.4f64.powi(k as i32))).abs() < 1e-12);
    }
    let mut g = Graph::new();
    construct(&mut g, &[], &PolicyArbiter, &arbitration()).unwrap();
    assert_eq!(g, Graph::new());
}

#[test]
fn out_of_order_streams_are_rejected_before_any_merge() {
    let a = entity("A", EntityType::Gene, "1");
    let b = entity("B", EntityType::Disease, "D1");
    let stream = [
        candidate(&a, RelationType::Associate, &b, 0.6, 1, "2010-01-02"),
        candidate(&a, RelationType::Associate, &b, 0.6, 2, "2010-01-01"),
    ];
    let mut g = Graph::new();
    assert!(matches!(construct(&mut g, &stream, &PolicyArbiter, &arbitration()), Err(StoreError::OutOfOrder { .. })));
    assert_eq!(g.edge_count(), 0);
}

#[test]
fn neighbors_are_incident_edges() {
    let covid = entity("COVID-19", EntityType::Disease, "D000086382");
    let others = [
        entity("tocilizumab", EntityType::Chemical, "D000068800"),
        entity("TNF", EntityType::Gene, "7124"),
        entity("FGB", EntityType::Gene, "2244"),
        entity("IL6", EntityType::Gene, "3569"),
        entity("dexamethasone", EntityType::Chemical, "D003907"),
    ];
    let rels = [RelationType::Treat, RelationType::PositiveCorrelate, RelationType::PositiveCorrelate, RelationType::Associate, RelationType::Treat];
    let stream: Vec<_> =
        others.iter().zip(rels).enumerate().map(|(i, (o, r))| candidate(o, r, &covid, 0.9, i as u64 + 1, "2020-05-01")).collect();
    let mut g = Graph::new();
    construct(&mut g, &stream, &PolicyArbiter, &arbitration()).unwrap();
    assert_eq!(g.neighbors("D000086382").unwrap().len(), 5);
    // Treat points at COVID-19 yet is visible from both ends.
    assert_eq!(g.neighbors("D000068800").unwrap().len(), 1);
    let lonely = entity("Lonely", EntityType::Species, "9606");
    g.upsert_node((&lonely).into());
    assert!(g.neighbors("9606").unwrap().is_empty());
    assert!(g.neighbors("nope").is_err());
}

#[test]
fn stats_bins_by_floor() {
    let hub = entity("Hub", EntityType::Disease, "D1");
    let stream: Vec<_> = [0.60, 0.64, 0.65]
        .iter()
        .enumerate()
        .map(|(i, &s)| candidate(&entity(&format!("G{i}"), EntityType::Gene, &format!("{i}")), RelationType::Associate, &hub, s, i as u64 + 1, "2000-01-01"))
        .collect();
    let mut g = Graph::new();
    construct(&mut g, &stream, &PolicyArbiter, &arbitration()).unwrap();
    let st = GraphStats::of(&g);
    assert_eq!((st.bin_count(0.60), st.bin_count(0.65)), (2, 1));
    assert_eq!(st.nodes_by_type[&EntityType::Gene], 3);
    assert_eq!(st.edges_by_relation[&RelationType::Associate], 3);

    let empty = GraphStats::of(&Graph::new());
    assert_eq!((empty.node_count, empty.edge_count), (0, 0));
    assert!(empty.confidence_histogram.iter().all(|b| b.count == 0));
}

#[test]
fn snapshots_round_trip_atomically() {
    let fx = repurposing_fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("graph.jsonl");
    save_snapshot(&fx.graph, &path, None).unwrap();
    let first = std::fs::read(&path).unwrap();
    save_snapshot(&fx.graph, &path, None).unwrap();
    assert_eq!(first, std::fs::read(&path).unwrap());
    let (header, loaded) = load_snapshot(&path).unwrap();
    assert_eq!(loaded, fx.graph);
    assert_eq!((header.nodes, header.edges), (fx.graph.node_count(), fx.graph.edge_count()));
    // Only the snapshot itself is left behind.
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);

    save_snapshot(&fx.graph, &path, Some("stopped early")).unwrap();
    assert_eq!(load_snapshot(&path).unwrap().0.partial.as_deref(), Some("stopped early"));

    let truncated = &first[..first.len() - 10];
    assert!(read_snapshot(truncated).is_err());
    let mut wrong_version = String::from_utf8(first.clone()).unwrap();
    wrong_version = wrong_version.replacen("\"version\":1", "\"version\":2", 1);
    assert!(read_snapshot(wrong_version.as_bytes()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_is_order_invariant(mut xs in prop::collection::vec(0.0f64..=1.0, 0..20), seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let a = fold_confidence(xs.iter().copied()).unwrap();
        xs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let b = fold_confidence(xs.iter().copied()).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn random_streams_keep_one_edge_per_pair(picks in prop::collection::vec((0usize..6, 0usize..6, 0usize..4, 12u32..=20), 1..60)) {
        let ents: Vec<_> = (0..6).map(|i| entity(&format!("E{i}"), [EntityType::Gene, EntityType::Chemical, EntityType::Disease][i % 3], &format!("id{i}"))).collect();
        let rels = [RelationType::Associate, RelationType::PositiveCorrelate, RelationType::NegativeCorrelate, RelationType::Cause];
        let stream: Vec<_> = picks
            .iter()
            .enumerate()
            .filter(|(_, (a, b, r, _))| a != b && rels[*r].allows(ents[*a].entity_type, ents[*b].entity_type))
            .map(|(i, (a, b, r, s))| candidate(&ents[*a], rels[*r], &ents[*b], f64::from(*s) / 20.0, i as u64 + 1, "2000-01-01"))
            .collect();
        let mut g = Graph::new();
        construct(&mut g, &stream, &PolicyArbiter, &arbitration()).unwrap();
        let mut pairs = std::collections::BTreeSet::new();
        for e in g.edges() {
            let p = if e.head < e.tail { (e.head.clone(), e.tail.clone()) } else { (e.tail.clone(), e.head.clone()) };
            prop_assert!(pairs.insert(p));
            let s = fold_confidence(e.evidence.iter().map(|v| v.sample_confidence)).unwrap();
            prop_assert!((s - e.confidence).abs() <= 1e-12);
            prop_assert_eq!(e.timestamp, e.evidence.iter().map(|v| v.date).max().unwrap());
        }
        prop_assert_eq!(g.journal().len(), stream.len());
        let mut buf = Vec::new();
        write_snapshot(&g, &mut buf, None).unwrap();
        prop_assert_eq!(read_snapshot(buf.as_slice()).unwrap().1, g);
    }
}
