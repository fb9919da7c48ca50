mod common;

use std::collections::BTreeSet;

use common::{basis, build, fixture, tiny5};
use hypograph_core::gateway::StaticEmbedder;
use hypograph_core::graph::{
    ensure_embeddings, load_graph, load_graph_file, nearest_node, random_node_pair, write_graphml,
    EmbeddingCache, EmbeddingError, GraphError, GraphMlOptions,
};
use proptest::prelude::*;

fn tiny5_embedder() -> StaticEmbedder {
    let g = tiny5();
    StaticEmbedder::new(
        g.nodes()
            .iter()
            .enumerate()
            .map(|(i, n)| (n.label.clone(), basis(i, 5))),
    )
}

#[test]
fn tiny5_counts_match_a_plain_text_scan() {
    let text = std::fs::read_to_string(fixture("tiny5.graphml")).unwrap();
    let nodes = text.matches("<node ").count();
    let edges = text.matches("<edge ").count();
    let g = tiny5();
    assert_eq!((g.node_count(), g.edge_count()), (nodes, edges));
    assert_eq!((nodes, edges), (5, 6));
}

#[test]
fn malformed_fixture_reports_line_and_column() {
    match load_graph_file(&fixture("malformed.graphml"), &GraphMlOptions::default()) {
        Err(GraphError::Parse { line, column, .. }) => {
            assert_eq!(line, 7);
            assert!(column > 0);
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn dangling_edge_is_named() {
    let err =
        load_graph_file(&fixture("dangling.graphml"), &GraphMlOptions::default()).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, GraphError::Integrity(_)));
    assert!(msg.contains("b -> ghost"), "{msg}");
}

#[test]
fn missing_file_is_io_error() {
    assert!(matches!(
        load_graph_file(&fixture("nope.graphml"), &GraphMlOptions::default()),
        Err(GraphError::Io { .. })
    ));
}

#[test]
fn multi_edges_and_self_loops_survive() {
    let g = build(
        &[("a", "A"), ("b", "B")],
        &[("a", "b", "x"), ("a", "b", "y"), ("b", "b", "self")],
    );
    let text = write_graphml(&g, &GraphMlOptions::default());
    let back = load_graph(text.as_bytes(), &GraphMlOptions::default()).unwrap();
    assert_eq!(back.edge_count(), 3);
}

#[test]
fn tiny5_round_trip_preserves_everything() {
    let g = tiny5();
    let back = load_graph(
        write_graphml(&g, &GraphMlOptions::default()).as_bytes(),
        &GraphMlOptions::default(),
    )
    .unwrap();
    let ids = |g: &hypograph_core::graph::KnowledgeGraph| {
        g.nodes()
            .iter()
            .map(|n| (n.id.clone(), n.label.clone()))
            .collect::<BTreeSet<_>>()
    };
    let mut e1: Vec<_> = g
        .edges()
        .iter()
        .map(|e| (e.source.clone(), e.target.clone(), e.relation.clone()))
        .collect();
    let mut e2: Vec<_> = back
        .edges()
        .iter()
        .map(|e| (e.source.clone(), e.target.clone(), e.relation.clone()))
        .collect();
    e1.sort();
    e2.sort();
    assert_eq!(ids(&g), ids(&back));
    assert_eq!(e1, e2);
}

#[test]
fn ensure_embeddings_counts_and_caches() {
    let dir = tempfile::tempdir().unwrap();
    let g = tiny5();
    let cache =
        EmbeddingCache::at(dir.path().join("tiny5.graphml.embeddings.jsonl")).with_batch_size(1);
    let e = tiny5_embedder();
    let s = ensure_embeddings(&g, &e, &cache).unwrap();
    assert_eq!(s.len(), 5);
    assert_eq!(e.calls(), 5);
    let again = tiny5_embedder();
    ensure_embeddings(&g, &again, &cache).unwrap();
    assert_eq!(again.calls(), 0);
}

#[test]
fn sidecar_sits_next_to_the_graph() {
    let c = EmbeddingCache::sidecar_for(std::path::Path::new("/data/kg.graphml"));
    assert_eq!(
        c.path().unwrap(),
        std::path::Path::new("/data/kg.graphml.embeddings.jsonl")
    );
}

#[test]
fn non_normalized_vectors_are_normalized() {
    let g = tiny5();
    let e = StaticEmbedder::new(
        g.nodes()
            .iter()
            .enumerate()
            .map(|(i, n)| (n.label.clone(), vec![3.0 * (i + 1) as f32, 4.0, -7.5])),
    );
    let s = ensure_embeddings(&g, &e, &EmbeddingCache::in_memory()).unwrap();
    for i in g.indices() {
        let norm: f64 = s
            .vector(i)
            .iter()
            .map(|&x| f64::from(x) * f64::from(x))
            .sum::<f64>()
            .sqrt();
        assert!((norm - 1.0).abs() <= 1e-6, "norm {norm}");
    }
}

#[test]
fn every_label_finds_its_own_node() {
    let g = tiny5();
    let e = tiny5_embedder();
    let s = ensure_embeddings(&g, &e, &EmbeddingCache::in_memory()).unwrap();
    for n in g.nodes() {
        let (id, sim) = nearest_node(&g, &s, &n.label, &e).unwrap();
        assert_eq!(id, n.id);
        assert!((sim - 1.0).abs() <= 1e-6);
        let (padded, _) = nearest_node(&g, &s, &format!("\t {} \n", n.label), &e).unwrap();
        assert_eq!(padded, n.id);
    }
}

#[test]
fn nearest_ties_go_to_smaller_id() {
    let g = build(&[("zeta", "one"), ("alpha", "two"), ("mid", "three")], &[]);
    let e = StaticEmbedder::new([
        ("one", vec![1.0, 0.0]),
        ("two", vec![1.0, 0.0]),
        ("three", vec![0.0, 1.0]),
        ("query", vec![2.0, 0.0]),
    ]);
    let s = ensure_embeddings(&g, &e, &EmbeddingCache::in_memory()).unwrap();
    assert_eq!(nearest_node(&g, &s, "query", &e).unwrap().0, "alpha");
    assert!(matches!(
        nearest_node(&g, &s, "", &e),
        Err(EmbeddingError::Argument(_))
    ));
}

#[test]
fn random_pair_is_deterministic_and_distinct() {
    let g = tiny5();
    assert_eq!(
        random_node_pair(&g, 7).unwrap(),
        random_node_pair(&g, 7).unwrap()
    );
    for seed in 0..1000 {
        let (a, b) = random_node_pair(&g, seed).unwrap();
        assert_ne!(a, b);
    }
}

#[test]
fn two_node_graph_yields_the_only_pair() {
    let g = build(&[("p", "P"), ("q", "Q")], &[("p", "q", "r")]);
    let only: BTreeSet<&str> = ["p", "q"].into();
    for seed in 0..50 {
        let (a, b) = random_node_pair(&g, seed).unwrap();
        assert_eq!(BTreeSet::from([a.as_str(), b.as_str()]), only);
    }
    let one = build(&[("p", "P")], &[]);
    assert!(matches!(
        random_node_pair(&one, 0),
        Err(GraphError::EmptyInput(_))
    ));
}

proptest! {
    #[test]
    fn write_then_load_is_identity(
        labels in proptest::collection::vec("[a-zA-Z &<>\"']{1,12}", 1..8),
        edges in proptest::collection::vec((0usize..8, 0usize..8, "[a-z <&]{1,8}"), 0..12),
    ) {
        let labels: Vec<String> = labels.into_iter().map(|l| if l.trim().is_empty() { "x".into() } else { l }).collect();
        let ids: Vec<String> = (0..labels.len()).map(|i| format!("n{i}")).collect();
        let nodes: Vec<(&str, &str)> = ids.iter().zip(&labels).map(|(a, b)| (a.as_str(), b.trim())).collect();
        let es: Vec<(&str, &str, &str)> = edges
            .iter()
            .filter(|(_, _, r)| !r.trim().is_empty())
            .map(|(a, b, r)| (ids[a % ids.len()].as_str(), ids[b % ids.len()].as_str(), r.trim()))
            .collect();
        let g = build(&nodes, &es);
        let back = load_graph(write_graphml(&g, &GraphMlOptions::default()).as_bytes(), &GraphMlOptions::default()).unwrap();
        prop_assert_eq!(back.nodes(), g.nodes());
        prop_assert_eq!(back.edges(), g.edges());
    }
}
