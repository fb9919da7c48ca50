//! Ontological knowledge graph: labeled concept nodes joined by
//! relation-labeled edges.
//!
//! Edges keep the direction they had in the source file but every traversal
//! in this crate treats the graph as undirected.

mod embeddings;
mod graphml;

use std::collections::HashMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embeddings::{
    ensure_embeddings, nearest_node, EmbeddingCache, EmbeddingError, EmbeddingStore, CACHE_FORMAT,
    CACHE_VERSION,
};
pub use graphml::{load_graph, load_graph_file, write_graphml, GraphMlOptions};

/// Dense index of a node inside one [`KnowledgeGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeIdx(pub u32);

impl NodeIdx {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub source: String,
    pub target: String,
    pub relation: String,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("malformed GraphML at line {line}, column {column}: {message}")]
    Parse {
        line: u32,
        column: u32,
        message: String,
    },
    #[error("graph integrity error: {0}")]
    Integrity(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Serialize, Deserialize)]
struct GraphParts {
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
}

/// Immutable, indexed knowledge graph.
///
/// Invariants hold by construction: every edge endpoint is a known node,
/// node ids are unique, and each edge appears exactly once in the incidence
/// list of each of its endpoints (once in total for a self-loop).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "GraphParts", try_from = "GraphParts")]
pub struct KnowledgeGraph {
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
    endpoints: Vec<(NodeIdx, NodeIdx)>,
    by_id: HashMap<String, NodeIdx>,
    incident: Vec<Vec<usize>>,
    // distinct neighbors, excluding the node itself, sorted by node id
    neighbors: Vec<Vec<NodeIdx>>,
    // position of each node in lexicographic id order
    id_rank: Vec<u32>,
}

impl KnowledgeGraph {
    /// Builds a graph from node and edge records, validating every invariant.
    pub fn new(nodes: Vec<NodeRecord>, edges: Vec<EdgeRecord>) -> Result<Self, GraphError> {
        if nodes.is_empty() {
            return Err(GraphError::EmptyInput("graph has no nodes".into()));
        }
        let mut by_id = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if n.label.trim().is_empty() {
                return Err(GraphError::Integrity(format!(
                    "node `{}` has an empty label",
                    n.id
                )));
            }
            if by_id.insert(n.id.clone(), NodeIdx(i as u32)).is_some() {
                return Err(GraphError::Integrity(format!(
                    "duplicate node id `{}`",
                    n.id
                )));
            }
        }

        let mut endpoints = Vec::with_capacity(edges.len());
        let mut incident = vec![Vec::new(); nodes.len()];
        for (i, e) in edges.iter().enumerate() {
            let missing = |id: &str| {
                GraphError::Integrity(format!(
                    "edge #{i} ({} -> {}, `{}`) references missing node `{id}`",
                    e.source, e.target, e.relation
                ))
            };
            let s = *by_id.get(&e.source).ok_or_else(|| missing(&e.source))?;
            let t = *by_id.get(&e.target).ok_or_else(|| missing(&e.target))?;
            if e.relation.trim().is_empty() {
                return Err(GraphError::Integrity(format!(
                    "edge #{i} ({} -> {}) has an empty relation",
                    e.source, e.target
                )));
            }
            endpoints.push((s, t));
            incident[s.index()].push(i);
            if s != t {
                incident[t.index()].push(i);
            }
        }

        let mut order: Vec<usize> = (0..nodes.len()).collect();
        order.sort_by(|&a, &b| nodes[a].id.cmp(&nodes[b].id));
        let mut id_rank = vec![0u32; nodes.len()];
        for (rank, &i) in order.iter().enumerate() {
            id_rank[i] = rank as u32;
        }

        let neighbors = (0..nodes.len())
            .map(|u| {
                let mut ns: Vec<NodeIdx> = incident[u]
                    .iter()
                    .map(|&e| {
                        let (s, t) = endpoints[e];
                        if s.index() == u {
                            t
                        } else {
                            s
                        }
                    })
                    .filter(|v| v.index() != u)
                    .collect();
                ns.sort_by_key(|v| id_rank[v.index()]);
                ns.dedup();
                ns
            })
            .collect();

        Ok(Self {
            nodes,
            edges,
            endpoints,
            by_id,
            incident,
            neighbors,
            id_rank,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn edges(&self) -> &[EdgeRecord] {
        &self.edges
    }

    pub fn node(&self, idx: NodeIdx) -> &NodeRecord {
        &self.nodes[idx.index()]
    }

    pub fn label(&self, idx: NodeIdx) -> &str {
        &self.nodes[idx.index()].label
    }

    pub fn id(&self, idx: NodeIdx) -> &str {
        &self.nodes[idx.index()].id
    }

    pub fn index_of(&self, id: &str) -> Option<NodeIdx> {
        self.by_id.get(id).copied()
    }

    pub fn require(&self, id: &str) -> Result<NodeIdx, GraphError> {
        self.index_of(id)
            .ok_or_else(|| GraphError::UnknownNode(id.to_string()))
    }

    /// Index of the first node (in file order) whose label matches exactly.
    pub fn find_by_label(&self, label: &str) -> Option<NodeIdx> {
        self.nodes
            .iter()
            .position(|n| n.label == label)
            .map(|i| NodeIdx(i as u32))
    }

    pub fn indices(&self) -> impl Iterator<Item = NodeIdx> + '_ {
        (0..self.nodes.len() as u32).map(NodeIdx)
    }

    /// Distinct undirected neighbors of `idx`, sorted by node id.
    pub fn neighbors(&self, idx: NodeIdx) -> &[NodeIdx] {
        &self.neighbors[idx.index()]
    }

    /// Edge indices incident to `idx`, in file order.
    pub fn incident_edges(&self, idx: NodeIdx) -> &[usize] {
        &self.incident[idx.index()]
    }

    pub fn edge_endpoints(&self, edge: usize) -> (NodeIdx, NodeIdx) {
        self.endpoints[edge]
    }

    /// Rank of the node id in lexicographic order; used for deterministic
    /// tie-breaking without string comparisons.
    pub fn id_rank(&self, idx: NodeIdx) -> u32 {
        self.id_rank[idx.index()]
    }

    /// First edge (in file order) joining `a` and `b` in either direction.
    pub fn edge_between(&self, a: NodeIdx, b: NodeIdx) -> Option<&EdgeRecord> {
        self.incident[a.index()]
            .iter()
            .find(|&&e| {
                let (s, t) = self.endpoints[e];
                (s == a && t == b) || (s == b && t == a)
            })
            .map(|&e| &self.edges[e])
    }

    pub fn are_adjacent(&self, a: NodeIdx, b: NodeIdx) -> bool {
        self.edge_between(a, b).is_some()
    }

    /// Node-induced subgraph over `keep`, preserving file order of nodes and
    /// edges.
    pub fn induced(&self, keep: &[bool]) -> Result<KnowledgeGraph, GraphError> {
        let nodes = self
            .nodes
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(n, _)| n.clone())
            .collect();
        let edges = self
            .edges
            .iter()
            .zip(&self.endpoints)
            .filter(|(_, (s, t))| keep[s.index()] && keep[t.index()])
            .map(|(e, _)| e.clone())
            .collect();
        KnowledgeGraph::new(nodes, edges)
    }
}

impl From<KnowledgeGraph> for GraphParts {
    fn from(g: KnowledgeGraph) -> Self {
        GraphParts {
            nodes: g.nodes,
            edges: g.edges,
        }
    }
}

impl TryFrom<GraphParts> for KnowledgeGraph {
    type Error = GraphError;

    fn try_from(p: GraphParts) -> Result<Self, GraphError> {
        KnowledgeGraph::new(p.nodes, p.edges)
    }
}

/// Draws two distinct node ids uniformly without replacement.
pub fn random_node_pair(g: &KnowledgeGraph, seed: u64) -> Result<(String, String), GraphError> {
    if g.node_count() < 2 {
        return Err(GraphError::EmptyInput(format!(
            "need at least 2 nodes to draw a pair, graph has {}",
            g.node_count()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, g.node_count(), 2);
    let a = NodeIdx(picked.index(0) as u32);
    let b = NodeIdx(picked.index(1) as u32);
    Ok((g.id(a).to_string(), g.id(b).to_string()))
}
