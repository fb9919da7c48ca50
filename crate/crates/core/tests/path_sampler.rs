mod common;

use std::collections::BTreeSet;

use common::*;
use hypograph_core::graph::GraphMlOptions;
use hypograph_core::graph::{EmbeddingStore, KnowledgeGraph};
use hypograph_core::path::{
    extract_subgraph, find_path, path_html, sample_path, serialize_path, shortest_path,
    subgraph_graphml, LegMode, PathConfig, PathError, PathMode, PathSample,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// tiny5 with embeddings under which h falls strictly only along
/// silk -> biocompatibility -> energy-intensive.
fn tiny5_single_descent() -> (KnowledgeGraph, EmbeddingStore) {
    let g = tiny5();
    let s = store(
        &g,
        &[
            ("n1", basis(0, 4)),
            ("n3", basis(1, 4)),
            ("n5", basis(2, 4)),
            ("n4", basis(3, 4)),
            ("n2", vec![0.6, 0.0, 0.0, 0.8]),
        ],
    );
    (g, s)
}

fn greedy() -> PathConfig {
    PathConfig {
        alpha: 0.0,
        k_waypoints: 0,
        ..Default::default()
    }
}

fn assert_valid(g: &KnowledgeGraph, p: &PathSample) {
    assert!(!p.nodes.is_empty());
    assert_eq!(p.relations.len(), p.nodes.len() - 1);
    for (i, w) in p.nodes.windows(2).enumerate() {
        let stored: Vec<&str> = g
            .edges()
            .iter()
            .filter(|e| {
                (e.source == w[0] && e.target == w[1]) || (e.source == w[1] && e.target == w[0])
            })
            .map(|e| e.relation.as_str())
            .collect();
        assert!(
            stored.contains(&p.relations[i].as_str()),
            "{} and {} not joined by `{}`",
            w[0],
            w[1],
            p.relations[i]
        );
    }
    let sub: BTreeSet<String> = p.subgraph.nodes().iter().map(|n| n.id.clone()).collect();
    assert_eq!(
        sub,
        oracle_ball_union(g, &p.nodes, p.meta.config.hops as usize)
    );
    let expected_edges = g
        .edges()
        .iter()
        .filter(|e| sub.contains(&e.source) && sub.contains(&e.target))
        .count();
    assert_eq!(p.subgraph.edge_count(), expected_edges);
    for w in &p.meta.waypoints {
        assert!(
            p.nodes.contains(w),
            "waypoint {w} missing from {:?}",
            p.nodes
        );
    }
    assert_eq!(p.path_string, serialize_path(p));
}

#[test]
fn greedy_follows_the_single_descending_route() {
    let (g, s) = tiny5_single_descent();
    let p = sample_path(&g, &s, "n1", "n4", &greedy()).unwrap();
    let oracle = oracle_best_first(&g, &s, "n1", "n4", 0.0, None).unwrap();
    assert_eq!(p.nodes, oracle);
    assert_eq!(p.nodes, vec!["n1", "n2", "n4"]);
    let descending: Vec<Vec<String>> = simple_paths(&g, "n1", "n4")
        .into_iter()
        .filter(|path| {
            path.windows(2)
                .all(|w| h(&g, &s, &w[1], "n4") < h(&g, &s, &w[0], "n4"))
        })
        .collect();
    assert_eq!(descending, vec![p.nodes.clone()]);
    assert!(p
        .path_string
        .starts_with("silk --> provides --> biocompatibility"));
    assert!(p.path_string.ends_with("--> energy-intensive"));
    assert_valid(&g, &p);
}

#[test]
fn reversed_stored_edge_renders_forward() {
    let (g, s) = tiny5_single_descent();
    let p = shortest_path(&g, &s, "n1", "n3", &PathConfig::default()).unwrap();
    assert_eq!(p.path_string, "silk --> possess --> biopolymers");
    let back = shortest_path(&g, &s, "n3", "n1", &PathConfig::default()).unwrap();
    assert_eq!(back.path_string, "biopolymers --> possess --> silk");
}

#[test]
fn shortest_prefers_embedding_closer_neighbor() {
    let g = tiny5();
    // n5 is closer to the target than n2, both routes have two hops
    let s = store(
        &g,
        &[
            ("n1", basis(0, 4)),
            ("n2", vec![0.9, 0.0, 0.0, 0.1]),
            ("n3", basis(1, 4)),
            ("n4", basis(3, 4)),
            ("n5", vec![0.0, 0.0, 0.5, 0.5]),
        ],
    );
    let p = shortest_path(&g, &s, "n1", "n4", &PathConfig::default()).unwrap();
    let all = simple_paths(&g, "n1", "n4");
    let min = all.iter().map(Vec::len).min().unwrap();
    let key = |path: &Vec<String>| -> Vec<(u64, String)> {
        path.iter()
            .map(|v| (h(&g, &s, v, "n4").to_bits(), v.clone()))
            .collect()
    };
    let best = all
        .iter()
        .filter(|p| p.len() == min)
        .min_by_key(|p| key(p))
        .unwrap();
    assert_eq!(&p.nodes, best);
    assert_eq!(p.nodes, vec!["n1", "n5", "n4"]);
    assert_eq!(p.meta.shortest_path_length, 2);
}

#[test]
fn adjacent_pair_in_shortest_mode() {
    let (g, s) = tiny5_single_descent();
    let p = shortest_path(&g, &s, "n2", "n4", &PathConfig::default()).unwrap();
    assert_eq!(p.nodes.len(), 2);
    assert_eq!(p.relations, vec!["reduces need for"]);
}

#[test]
fn find_path_dispatches_on_mode() {
    let (g, s) = tiny5_single_descent();
    let cfg = PathConfig {
        mode: PathMode::Shortest,
        ..Default::default()
    };
    assert_eq!(
        find_path(&g, &s, "n3", "n4", &cfg).unwrap().nodes.len() - 1,
        oracle_distance(&g, "n3", "n4").unwrap()
    );
}

#[test]
fn hundred_seeds_are_reproducible() {
    let (g, s) = tiny5_single_descent();
    for seed in 0..100 {
        let cfg = PathConfig {
            alpha: 0.8,
            k_waypoints: 2,
            seed,
            ..Default::default()
        };
        let a = sample_path(&g, &s, "n3", "n4", &cfg).unwrap();
        let b = sample_path(&g, &s, "n3", "n4", &cfg).unwrap();
        assert_eq!(a.path_string, b.path_string);
        assert_eq!(a.meta, b.meta);
        assert_valid(&g, &a);
    }
}

#[test]
fn waypoint_legs_can_use_breadth_first_search() {
    let (g, s) = tiny5_single_descent();
    let cfg = PathConfig {
        k_waypoints: 2,
        leg_mode: LegMode::Bfs,
        seed: 3,
        ..Default::default()
    };
    let p = sample_path(&g, &s, "n1", "n4", &cfg).unwrap();
    assert_eq!(p.meta.waypoints.len(), 2);
    assert_eq!(p.nodes.last().unwrap(), "n4");
    assert_valid(&g, &p);
}

#[test]
fn subgraph_hops_zero_is_the_path() {
    let g = tiny5();
    let sub = extract_subgraph(&g, &["n1", "n2"], 0).unwrap();
    assert_eq!(sub.node_count(), 2);
    assert_eq!(sub.edge_count(), 1);
}

#[test]
fn subgraph_hops_one_matches_closed_neighborhoods() {
    let g = tiny5();
    let path = vec!["n2".to_string(), "n4".to_string()];
    let sub = extract_subgraph(&g, &path, 1).unwrap();
    let got: BTreeSet<String> = sub.nodes().iter().map(|n| n.id.clone()).collect();
    assert_eq!(got, oracle_ball_union(&g, &path, 1));
    assert_eq!(
        got,
        ["n1", "n2", "n4", "n5"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    );
}

#[test]
fn star_hops_two_counts_by_hand() {
    // hub with 4 leaves, two of which carry one extra neighbor each, plus a
    // node three hops away
    let g = build(
        &[
            ("hub", "hub"),
            ("l1", "l1"),
            ("l2", "l2"),
            ("l3", "l3"),
            ("l4", "l4"),
            ("x1", "x1"),
            ("x2", "x2"),
            ("far", "far"),
        ],
        &[
            ("hub", "l1", "r"),
            ("hub", "l2", "r"),
            ("l3", "hub", "r"),
            ("hub", "l4", "r"),
            ("l1", "x1", "r"),
            ("x2", "l2", "r"),
            ("x1", "far", "r"),
        ],
    );
    let sub = extract_subgraph(&g, &["hub"], 2).unwrap();
    assert_eq!(sub.node_count(), 1 + 4 + 2);
    assert_eq!(sub.edge_count(), 6);
}

#[test]
fn exports_are_self_contained() {
    let (g, s) = tiny5_single_descent();
    let p = sample_path(&g, &s, "n1", "n4", &greedy()).unwrap();
    let html = path_html(&p);
    assert!(html.starts_with("<!DOCTYPE html>"));
    assert!(html.contains("<svg"));
    assert!(!html.contains("<script src"));
    assert!(html.contains("silk --&gt; provides --&gt; biocompatibility"));
    assert_eq!(html, path_html(&p));
    let xml = subgraph_graphml(&p, &GraphMlOptions::default());
    let back =
        hypograph_core::graph::load_graph(xml.as_bytes(), &GraphMlOptions::default()).unwrap();
    assert_eq!(back.node_count(), p.subgraph.node_count());
}

fn graph_strategy() -> impl Strategy<Value = (usize, Vec<(usize, usize)>, Vec<[f32; 4]>)> {
    (2usize..24).prop_flat_map(|n| {
        (
            Just(n),
            proptest::collection::vec((0..n, 0..n), 0..(3 * n)),
            proptest::collection::vec(proptest::array::uniform4(-1.0f32..1.0), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_mode_matches_queue_oracle(
        (n, edges, vecs) in graph_strategy(),
        a in 0usize..24,
        b in 0usize..24,
        seed in any::<u64>(),
        alpha in 0.0f64..10.0,
    ) {
        let (g, s) = random_graph(n, &edges, &vecs);
        let (src, dst) = (format!("v{:02}", a % n), format!("v{:02}", b % n));
        let cfg = PathConfig { alpha, seed, hops: (seed % 3) as u8, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let oracle = oracle_best_first(&g, &s, &src, &dst, alpha, Some(&mut rng));
        match sample_path(&g, &s, &src, &dst, &cfg) {
            Ok(p) => {
                prop_assert_eq!(Some(p.nodes.clone()), oracle);
                let distinct: BTreeSet<&String> = p.nodes.iter().collect();
                prop_assert_eq!(distinct.len(), p.nodes.len());
                assert_valid(&g, &p);
            }
            Err(PathError::NoPath { .. }) => {
                prop_assert!(oracle.is_none());
                prop_assert!(oracle_distance(&g, &src, &dst).is_none());
            }
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }

    #[test]
    fn waypoint_walks_are_valid_and_reproducible(
        (n, edges, vecs) in graph_strategy(),
        a in 0usize..24,
        b in 0usize..24,
        seed in any::<u64>(),
        k in 0usize..5,
    ) {
        let (g, s) = random_graph(n, &edges, &vecs);
        let (src, dst) = (format!("v{:02}", a % n), format!("v{:02}", b % n));
        let cfg = PathConfig { k_waypoints: k, seed, ..Default::default() };
        if let Ok(p) = sample_path(&g, &s, &src, &dst, &cfg) {
            let again = sample_path(&g, &s, &src, &dst, &cfg).unwrap();
            prop_assert_eq!(&p.path_string, &again.path_string);
            prop_assert_eq!(p.meta.waypoints.len() + p.meta.waypoint_shortfall, k);
            prop_assert_eq!(p.nodes.first().unwrap(), &src);
            prop_assert_eq!(p.nodes.last().unwrap(), &dst);
            assert_valid(&g, &p);
        }
    }

    #[test]
    fn shortest_mode_is_optimal(
        (n, edges, vecs) in graph_strategy(),
        a in 0usize..24,
        b in 0usize..24,
    ) {
        let (g, s) = random_graph(n, &edges, &vecs);
        let (src, dst) = (format!("v{:02}", a % n), format!("v{:02}", b % n));
        match (shortest_path(&g, &s, &src, &dst, &PathConfig::default()), oracle_distance(&g, &src, &dst)) {
            (Ok(p), Some(d)) => {
                prop_assert_eq!(p.nodes.len() - 1, d);
                assert_valid(&g, &p);
            }
            (Err(PathError::NoPath { .. }), None) => {}
            (got, want) => return Err(TestCaseError::fail(format!("{:?} vs {want:?}", got.map(|p| p.nodes)))),
        }
    }
}
