//! Heuristic path sampling between two concepts, shortest-path mode, context
//! subgraph extraction and path serialization.

mod export;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EmbeddingError, EmbeddingStore, GraphError, KnowledgeGraph, NodeIdx};

pub use export::{path_html, subgraph_graphml};

/// Separator between concepts and relations in a serialized path.
pub const ARROW: &str = " --> ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathMode {
    #[default]
    Random,
    Shortest,
}

/// Search used for the legs that visit waypoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LegMode {
    /// Greedy best-first search with no randomness.
    #[default]
    Heuristic,
    /// Unweighted breadth-first shortest path.
    Bfs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathConfig {
    pub alpha: f64,
    pub k_waypoints: usize,
    pub hops: u8,
    pub seed: u64,
    pub mode: PathMode,
    pub leg_mode: LegMode,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            k_waypoints: 0,
            hops: 2,
            seed: 0,
            mode: PathMode::Random,
            leg_mode: LegMode::Heuristic,
        }
    }
}

impl PathConfig {
    pub const MAX_ALPHA: f64 = 10.0;
    pub const MAX_HOPS: u8 = 2;

    pub fn validate(&self) -> Result<(), PathError> {
        if !(0.0..=Self::MAX_ALPHA).contains(&self.alpha) {
            return Err(PathError::Config(format!(
                "alpha must be in [0, {}], got {}",
                Self::MAX_ALPHA,
                self.alpha
            )));
        }
        if self.hops > Self::MAX_HOPS {
            return Err(PathError::Config(format!(
                "hops must be 0, 1 or 2, got {}",
                self.hops
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PathError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Store(#[from] EmbeddingError),
    #[error("invalid path configuration: {0}")]
    Config(String),
    #[error(
        "no path from `{source_id}` to `{target_id}`: they lie in different components \
         (represented by `{source_component}` and `{target_component}`)"
    )]
    NoPath {
        source_id: String,
        target_id: String,
        source_component: String,
        target_component: String,
    },
}

/// How a sample was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMeta {
    pub source: String,
    pub target: String,
    pub config: PathConfig,
    /// Waypoint ids in the order they were visited.
    pub waypoints: Vec<String>,
    /// Requested waypoints that could not be selected for lack of candidates.
    pub waypoint_shortfall: usize,
    /// Unweighted distance between source and target in the full graph.
    pub shortest_path_length: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathSample {
    pub nodes: Vec<String>,
    pub labels: Vec<String>,
    pub relations: Vec<String>,
    pub subgraph: KnowledgeGraph,
    pub path_string: String,
    pub meta: PathMeta,
}

/// `label --> relation --> label ...` in path order.
pub fn serialize_path(sample: &PathSample) -> String {
    join_path(&sample.labels, &sample.relations)
}

fn join_path<S: AsRef<str>>(labels: &[S], relations: &[S]) -> String {
    let mut out = String::new();
    for (i, label) in labels.iter().enumerate() {
        if i > 0 {
            out.push_str(ARROW);
            out.push_str(relations[i - 1].as_ref());
            out.push_str(ARROW);
        }
        out.push_str(label.as_ref());
    }
    out
}

#[derive(Debug)]
struct QueueEntry {
    cost: f64,
    rank: u32,
    seq: u64,
    node: NodeIdx,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueueEntry {}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueueEntry {
    // reversed: BinaryHeap is a max-heap and the lowest cost must pop first
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then(other.rank.cmp(&self.rank))
            .then(other.seq.cmp(&self.seq))
    }
}

fn heuristic(store: &EmbeddingStore, v: NodeIdx, target: NodeIdx) -> f64 {
    1.0 - store.similarity(v, target)
}

/// Greedy best-first search ordered by `h(v, target) + alpha * u`.
///
/// With `rng`, one uniform draw in [0, 1) is taken for every neighbor
/// examined, in expansion order then neighbor-id order. Ties in cost are
/// broken by node id, then by insertion order. A node's predecessor is the
/// node that first discovered it.
fn best_first(
    g: &KnowledgeGraph,
    store: &EmbeddingStore,
    source: NodeIdx,
    target: NodeIdx,
    alpha: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Option<Vec<NodeIdx>> {
    let n = g.node_count();
    let mut visited = vec![false; n];
    let mut pred: Vec<Option<NodeIdx>> = vec![None; n];
    let mut queue = BinaryHeap::new();
    let mut seq = 0u64;
    queue.push(QueueEntry {
        cost: 0.0,
        rank: g.id_rank(source),
        seq,
        node: source,
    });

    while let Some(QueueEntry { node: u, .. }) = queue.pop() {
        if visited[u.index()] {
            continue;
        }
        if u == target {
            let mut path = vec![u];
            let mut cur = u;
            while let Some(p) = pred[cur.index()] {
                path.push(p);
                cur = p;
            }
            path.reverse();
            return Some(path);
        }
        visited[u.index()] = true;
        for &v in g.neighbors(u) {
            let noise = match rng.as_deref_mut() {
                Some(r) => r.random::<f64>(),
                None => 0.0,
            };
            if visited[v.index()] {
                continue;
            }
            let cost = heuristic(store, v, target) + alpha * noise;
            if pred[v.index()].is_none() && v != source {
                pred[v.index()] = Some(u);
            }
            seq += 1;
            queue.push(QueueEntry {
                cost,
                rank: g.id_rank(v),
                seq,
                node: v,
            });
        }
    }
    None
}

/// Hop distance from every node to `from`; `usize::MAX` when unreachable.
pub(crate) fn bfs_distances(g: &KnowledgeGraph, from: NodeIdx) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.node_count()];
    dist[from.index()] = 0;
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        for &v in g.neighbors(u) {
            if dist[v.index()] == usize::MAX {
                dist[v.index()] = dist[u.index()] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Minimum-hop path, preferring at each step the neighbor closest to the
/// target in embedding space, then the smaller id.
fn bfs_path(
    g: &KnowledgeGraph,
    store: &EmbeddingStore,
    source: NodeIdx,
    target: NodeIdx,
) -> Option<Vec<NodeIdx>> {
    let dist = bfs_distances(g, target);
    if dist[source.index()] == usize::MAX {
        return None;
    }
    let mut path = vec![source];
    let mut cur = source;
    while cur != target {
        let want = dist[cur.index()] - 1;
        cur = g
            .neighbors(cur)
            .iter()
            .copied()
            .filter(|v| dist[v.index()] == want)
            .min_by(|&a, &b| {
                heuristic(store, a, target)
                    .total_cmp(&heuristic(store, b, target))
                    .then(g.id_rank(a).cmp(&g.id_rank(b)))
            })
            .expect("a neighbor one hop closer exists");
        path.push(cur);
    }
    Some(path)
}

fn component_representative(g: &KnowledgeGraph, from: NodeIdx) -> String {
    let dist = bfs_distances(g, from);
    g.indices()
        .filter(|i| dist[i.index()] != usize::MAX)
        .min_by_key(|&i| g.id_rank(i))
        .map(|i| g.id(i).to_string())
        .expect("start node is in its own component")
}

fn no_path(g: &KnowledgeGraph, s: NodeIdx, t: NodeIdx) -> PathError {
    PathError::NoPath {
        source_id: g.id(s).to_string(),
        target_id: g.id(t).to_string(),
        source_component: component_representative(g, s),
        target_component: component_representative(g, t),
    }
}

/// Nodes within `hops` undirected hops of any seed node.
fn neighborhood(g: &KnowledgeGraph, seeds: &[NodeIdx], hops: usize) -> Vec<bool> {
    let mut dist = vec![usize::MAX; g.node_count()];
    let mut queue = VecDeque::new();
    for &s in seeds {
        if dist[s.index()] == usize::MAX {
            dist[s.index()] = 0;
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        if dist[u.index()] == hops {
            continue;
        }
        for &v in g.neighbors(u) {
            if dist[v.index()] == usize::MAX {
                dist[v.index()] = dist[u.index()] + 1;
                queue.push_back(v);
            }
        }
    }
    dist.into_iter().map(|d| d != usize::MAX).collect()
}

/// Node-induced subgraph over everything within `hops` of the path nodes.
pub fn extract_subgraph<S: AsRef<str>>(
    g: &KnowledgeGraph,
    path_nodes: &[S],
    hops: usize,
) -> Result<KnowledgeGraph, GraphError> {
    let seeds = path_nodes
        .iter()
        .map(|id| g.require(id.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    if seeds.is_empty() {
        return Err(GraphError::EmptyInput("no path nodes given".into()));
    }
    g.induced(&neighborhood(g, &seeds, hops))
}

fn assemble(
    g: &KnowledgeGraph,
    walk: &[NodeIdx],
    cfg: &PathConfig,
    waypoints: Vec<String>,
    waypoint_shortfall: usize,
    shortest_path_length: usize,
) -> Result<PathSample, PathError> {
    let nodes: Vec<String> = walk.iter().map(|&i| g.id(i).to_string()).collect();
    let labels: Vec<String> = walk.iter().map(|&i| g.label(i).to_string()).collect();
    let relations: Vec<String> = walk
        .windows(2)
        .map(|w| {
            g.edge_between(w[0], w[1])
                .expect("consecutive path nodes are adjacent")
                .relation
                .clone()
        })
        .collect();
    let subgraph = g.induced(&neighborhood(g, walk, cfg.hops as usize))?;
    let path_string = join_path(&labels, &relations);
    Ok(PathSample {
        meta: PathMeta {
            source: nodes[0].clone(),
            target: nodes[nodes.len() - 1].clone(),
            config: cfg.clone(),
            waypoints,
            waypoint_shortfall,
            shortest_path_length,
        },
        nodes,
        labels,
        relations,
        subgraph,
        path_string,
    })
}

fn resolve(
    g: &KnowledgeGraph,
    store: &EmbeddingStore,
    source: &str,
    target: &str,
    cfg: &PathConfig,
) -> Result<(NodeIdx, NodeIdx), PathError> {
    cfg.validate()?;
    store.check_covers(g)?;
    Ok((g.require(source)?, g.require(target)?))
}

/// Randomized heuristic path from `source` to `target`, optionally detoured
/// through `cfg.k_waypoints` random waypoints next to the initial path.
///
/// The result is a function of the inputs and `cfg.seed` alone.
pub fn sample_path(
    g: &KnowledgeGraph,
    store: &EmbeddingStore,
    source: &str,
    target: &str,
    cfg: &PathConfig,
) -> Result<PathSample, PathError> {
    let (s, t) = resolve(g, store, source, target, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut walk =
        best_first(g, store, s, t, cfg.alpha, Some(&mut rng)).ok_or_else(|| no_path(g, s, t))?;
    let shortest = bfs_distances(g, t)[s.index()];

    let mut waypoints = Vec::new();
    let mut shortfall = 0;
    if cfg.k_waypoints > 0 {
        let mut on_path = vec![false; g.node_count()];
        for &p in &walk {
            on_path[p.index()] = true;
        }
        let mut candidates: Vec<NodeIdx> = Vec::new();
        let mut seen = on_path.clone();
        for &p in &walk {
            for &v in g.neighbors(p) {
                if !seen[v.index()] {
                    seen[v.index()] = true;
                    candidates.push(v);
                }
            }
        }
        candidates.sort_by_key(|&v| g.id_rank(v));
        let k = cfg.k_waypoints.min(candidates.len());
        shortfall = cfg.k_waypoints - k;
        let chosen: Vec<NodeIdx> = index::sample(&mut rng, candidates.len(), k)
            .into_iter()
            .map(|i| candidates[i])
            .collect();

        let leg = |from: NodeIdx, to: NodeIdx| match cfg.leg_mode {
            LegMode::Heuristic => best_first(g, store, from, to, 0.0, None),
            LegMode::Bfs => bfs_path(g, store, from, to),
        };
        for &w in chosen.iter().chain(std::iter::once(&t)) {
            let from = *walk.last().expect("walk is non-empty");
            let piece = leg(from, w).expect("waypoints share the component of the path");
            walk.extend_from_slice(&piece[1..]);
        }
        waypoints = chosen.iter().map(|&w| g.id(w).to_string()).collect();
    }
    assemble(g, &walk, cfg, waypoints, shortfall, shortest)
}

/// Minimum-hop path; among equally short routes each step prefers the
/// neighbor closest to the target in embedding space, then the smaller id.
pub fn shortest_path(
    g: &KnowledgeGraph,
    store: &EmbeddingStore,
    source: &str,
    target: &str,
    cfg: &PathConfig,
) -> Result<PathSample, PathError> {
    let (s, t) = resolve(g, store, source, target, cfg)?;
    let walk = bfs_path(g, store, s, t).ok_or_else(|| no_path(g, s, t))?;
    let len = walk.len() - 1;
    assemble(g, &walk, cfg, Vec::new(), 0, len)
}

/// Dispatches on `cfg.mode`.
pub fn find_path(
    g: &KnowledgeGraph,
    store: &EmbeddingStore,
    source: &str,
    target: &str,
    cfg: &PathConfig,
) -> Result<PathSample, PathError> {
    match cfg.mode {
        PathMode::Random => sample_path(g, store, source, target, cfg),
        PathMode::Shortest => shortest_path(g, store, source, target, cfg),
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::graph::fixtures::graph;

    fn store_for(g: &KnowledgeGraph, vecs: &[(&str, Vec<f32>)]) -> EmbeddingStore {
        let map: HashMap<String, Vec<f32>> = vecs
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect();
        EmbeddingStore::from_vectors(g, "test", map).unwrap()
    }

    fn line() -> (KnowledgeGraph, EmbeddingStore) {
        let g = graph(
            &[
                ("a", "silk"),
                ("b", "biocompatibility"),
                ("c", "biopolymers"),
            ],
            &[("a", "b", "provides"), ("c", "b", "possess")],
        );
        let s = store_for(
            &g,
            &[
                ("a", vec![1.0, 0.0]),
                ("b", vec![1.0, 1.0]),
                ("c", vec![0.0, 1.0]),
            ],
        );
        (g, s)
    }

    #[test]
    fn serializes_forward_with_stored_labels() {
        let (g, s) = line();
        let p = sample_path(&g, &s, "a", "c", &PathConfig::default()).unwrap();
        assert_eq!(
            p.path_string,
            "silk --> provides --> biocompatibility --> possess --> biopolymers"
        );
        assert_eq!(serialize_path(&p), p.path_string);
    }

    #[test]
    fn source_equals_target() {
        let (g, s) = line();
        let cfg = PathConfig {
            hops: 1,
            ..Default::default()
        };
        let p = sample_path(&g, &s, "a", "a", &cfg).unwrap();
        assert_eq!(p.nodes, vec!["a"]);
        assert!(p.relations.is_empty());
        assert_eq!(p.path_string, "silk");
        assert_eq!(p.subgraph.node_count(), 2);
    }

    #[test]
    fn disconnected_names_components() {
        let g = graph(
            &[("a", "x"), ("b", "y"), ("m", "z"), ("c", "w")],
            &[("a", "b", "r"), ("m", "c", "s")],
        );
        let s = store_for(
            &g,
            &[
                ("a", vec![1.0]),
                ("b", vec![1.0]),
                ("m", vec![1.0]),
                ("c", vec![1.0]),
            ],
        );
        match sample_path(&g, &s, "b", "m", &PathConfig::default()) {
            Err(PathError::NoPath {
                source_component,
                target_component,
                ..
            }) => {
                assert_eq!(source_component, "a");
                assert_eq!(target_component, "c");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            shortest_path(&g, &s, "b", "m", &PathConfig::default()),
            Err(PathError::NoPath { .. })
        ));
    }

    #[test]
    fn config_bounds() {
        let (g, s) = line();
        for cfg in [
            PathConfig {
                alpha: 10.5,
                ..Default::default()
            },
            PathConfig {
                alpha: -0.1,
                ..Default::default()
            },
            PathConfig {
                hops: 3,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                sample_path(&g, &s, "a", "c", &cfg),
                Err(PathError::Config(_))
            ));
        }
        assert!(matches!(
            sample_path(&g, &s, "a", "zz", &PathConfig::default()),
            Err(PathError::Graph(GraphError::UnknownNode(_)))
        ));
    }

    #[test]
    fn waypoint_shortfall_is_recorded() {
        let (g, s) = line();
        let cfg = PathConfig {
            k_waypoints: 3,
            ..Default::default()
        };
        let p = sample_path(&g, &s, "a", "b", &cfg).unwrap();
        assert_eq!(p.meta.waypoints, vec!["c"]);
        assert_eq!(p.meta.waypoint_shortfall, 2);
        assert_eq!(p.nodes, vec!["a", "b", "c", "b"]);
    }

    #[test]
    fn sample_round_trips_through_json() {
        let (g, s) = line();
        let p = sample_path(&g, &s, "a", "c", &PathConfig::default()).unwrap();
        let text = serde_json::to_string(&p).unwrap();
        let back: PathSample = serde_json::from_str(&text).unwrap();
        assert_eq!(back.nodes, p.nodes);
        assert_eq!(back.subgraph.edges(), p.subgraph.edges());
    }
}
