#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::PathBuf;

use hypograph_core::graph::{
    load_graph_file, EdgeRecord, EmbeddingStore, GraphMlOptions, KnowledgeGraph, NodeRecord,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn tiny5() -> KnowledgeGraph {
    load_graph_file(&fixture("tiny5.graphml"), &GraphMlOptions::default()).unwrap()
}

pub fn build(nodes: &[(&str, &str)], edges: &[(&str, &str, &str)]) -> KnowledgeGraph {
    KnowledgeGraph::new(
        nodes
            .iter()
            .map(|(id, label)| NodeRecord {
                id: id.to_string(),
                label: label.to_string(),
            })
            .collect(),
        edges
            .iter()
            .map(|(s, t, r)| EdgeRecord {
                source: s.to_string(),
                target: t.to_string(),
                relation: r.to_string(),
            })
            .collect(),
    )
    .unwrap()
}

pub fn store(g: &KnowledgeGraph, vectors: &[(&str, Vec<f32>)]) -> EmbeddingStore {
    let map: HashMap<String, Vec<f32>> = vectors
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect();
    EmbeddingStore::from_vectors(g, "test", map).unwrap()
}

/// Unit basis vector `i` of dimension `dim`.
pub fn basis(i: usize, dim: usize) -> Vec<f32> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

/// Undirected adjacency rebuilt from the raw edge list, ordered by id.
pub fn adjacency(g: &KnowledgeGraph) -> BTreeMap<String, BTreeSet<String>> {
    let mut adj: BTreeMap<String, BTreeSet<String>> = g
        .nodes()
        .iter()
        .map(|n| (n.id.clone(), BTreeSet::new()))
        .collect();
    for e in g.edges() {
        if e.source != e.target {
            adj.get_mut(&e.source).unwrap().insert(e.target.clone());
            adj.get_mut(&e.target).unwrap().insert(e.source.clone());
        }
    }
    adj
}

pub fn h(g: &KnowledgeGraph, s: &EmbeddingStore, v: &str, target: &str) -> f64 {
    1.0 - s.similarity(g.index_of(v).unwrap(), g.index_of(target).unwrap())
}

/// Hand-executed best-first queue: an unsorted list scanned for the minimum
/// (cost, id, insertion order) entry on every pop.
pub fn oracle_best_first(
    g: &KnowledgeGraph,
    s: &EmbeddingStore,
    source: &str,
    target: &str,
    alpha: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Option<Vec<String>> {
    let adj = adjacency(g);
    let mut queue: Vec<(f64, String, usize)> = vec![(0.0, source.to_string(), 0)];
    let mut inserted = 0;
    let mut visited: BTreeSet<String> = BTreeSet::new();
    let mut came_from: HashMap<String, String> = HashMap::new();
    while !queue.is_empty() {
        let mut best = 0;
        for i in 1..queue.len() {
            let (c, id, n) = &queue[i];
            let (bc, bid, bn) = &queue[best];
            if c < bc || (c == bc && (id < bid || (id == bid && n < bn))) {
                best = i;
            }
        }
        let (_, u, _) = queue.swap_remove(best);
        if visited.contains(&u) {
            continue;
        }
        if u == target {
            let mut path = vec![u.clone()];
            let mut cur = u;
            while let Some(p) = came_from.get(&cur) {
                path.push(p.clone());
                cur = p.clone();
            }
            path.reverse();
            return Some(path);
        }
        visited.insert(u.clone());
        for v in &adj[&u] {
            let noise: f64 = match rng.as_deref_mut() {
                Some(r) => r.random(),
                None => 0.0,
            };
            if visited.contains(v) {
                continue;
            }
            if v != source && !came_from.contains_key(v) {
                came_from.insert(v.clone(), u.clone());
            }
            inserted += 1;
            queue.push((h(g, s, v, target) + alpha * noise, v.clone(), inserted));
        }
    }
    None
}

/// Hop distance by breadth-first search over the raw edge list.
pub fn oracle_distance(g: &KnowledgeGraph, a: &str, b: &str) -> Option<usize> {
    let adj = adjacency(g);
    let mut dist: HashMap<&str, usize> = HashMap::from([(a, 0)]);
    let mut q = VecDeque::from([a]);
    while let Some(u) = q.pop_front() {
        if u == b {
            return Some(dist[u]);
        }
        for v in &adj[u] {
            if !dist.contains_key(v.as_str()) {
                dist.insert(v, dist[u] + 1);
                q.push_back(v);
            }
        }
    }
    None
}

/// All simple paths from `a` to `b`, by depth-first enumeration.
pub fn simple_paths(g: &KnowledgeGraph, a: &str, b: &str) -> Vec<Vec<String>> {
    fn go(
        adj: &BTreeMap<String, BTreeSet<String>>,
        cur: &mut Vec<String>,
        b: &str,
        out: &mut Vec<Vec<String>>,
    ) {
        let last = cur.last().unwrap().clone();
        if last == b {
            out.push(cur.clone());
            return;
        }
        for v in &adj[&last] {
            if !cur.contains(v) {
                cur.push(v.clone());
                go(adj, cur, b, out);
                cur.pop();
            }
        }
    }
    let adj = adjacency(g);
    let mut out = Vec::new();
    go(&adj, &mut vec![a.to_string()], b, &mut out);
    out
}

/// Union over path nodes of each node's own `hops`-ball.
pub fn oracle_ball_union(g: &KnowledgeGraph, seeds: &[String], hops: usize) -> BTreeSet<String> {
    let adj = adjacency(g);
    let mut all = BTreeSet::new();
    for s in seeds {
        let mut frontier = BTreeSet::from([s.clone()]);
        let mut seen = frontier.clone();
        for _ in 0..hops {
            let mut next = BTreeSet::new();
            for u in &frontier {
                for v in &adj[u] {
                    if seen.insert(v.clone()) {
                        next.insert(v.clone());
                    }
                }
            }
            frontier = next;
        }
        all.extend(seen);
    }
    all
}

/// Random graph with ids `v00..`, labels `concept NN`, and random vectors.
pub fn random_graph(
    n: usize,
    edges: &[(usize, usize)],
    vectors: &[[f32; 4]],
) -> (KnowledgeGraph, EmbeddingStore) {
    let ids: Vec<String> = (0..n).map(|i| format!("v{i:02}")).collect();
    let labels: Vec<String> = (0..n).map(|i| format!("concept {i:02}")).collect();
    let nodes: Vec<(&str, &str)> = ids
        .iter()
        .zip(&labels)
        .map(|(a, b)| (a.as_str(), b.as_str()))
        .collect();
    let rels: Vec<String> = (0..edges.len()).map(|i| format!("rel{i}")).collect();
    let es: Vec<(&str, &str, &str)> = edges
        .iter()
        .zip(&rels)
        .map(|(&(a, b), r)| (ids[a % n].as_str(), ids[b % n].as_str(), r.as_str()))
        .collect();
    let g = build(&nodes, &es);
    let vs: Vec<(&str, Vec<f32>)> = ids
        .iter()
        .zip(vectors)
        .map(|(id, v)| (id.as_str(), v.iter().map(|x| x + 0.01).collect()))
        .collect();
    let st = store(&g, &vs);
    (g, st)
}
