//! Loaded graph, embeddings and path queries shared by every session.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use hypograph_core::agents::Engine;
use hypograph_core::gateway::{EmbeddingBackend, HashingEmbedder, HttpEmbeddingBackend};
use hypograph_core::graph::{
    ensure_embeddings, load_graph_file, nearest_node, EmbeddingCache, EmbeddingStore,
    KnowledgeGraph,
};
use hypograph_core::path::{find_path, PathConfig, PathSample};
use serde::Serialize;

use crate::config::AppConfig;
use crate::error::ServiceError;

/// Immutable graph state; sessions hold it through an `Arc`.
pub struct GraphData {
    pub graph: KnowledgeGraph,
    pub store: EmbeddingStore,
    pub embedder: Arc<dyn EmbeddingBackend>,
    pub source: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub components: usize,
    pub isolated_nodes: usize,
    pub embedding_model: String,
    pub embedding_dimension: usize,
    pub source: Option<String>,
}

/// Offline runs use the hashing embedder; otherwise the configured HTTP
/// embedding backend.
pub fn embedder_for(cfg: &AppConfig) -> Result<Arc<dyn EmbeddingBackend>, ServiceError> {
    if cfg.offline {
        Ok(Arc::new(HashingEmbedder::new(
            cfg.embedding.offline_dimension.max(1),
        )))
    } else {
        Ok(Arc::new(HttpEmbeddingBackend::new(
            cfg.embedding.backend.clone(),
        )?))
    }
}

impl GraphData {
    pub fn new(
        graph: KnowledgeGraph,
        store: EmbeddingStore,
        embedder: Arc<dyn EmbeddingBackend>,
    ) -> Self {
        Self {
            graph,
            store,
            embedder,
            source: None,
        }
    }

    /// Embeds `graph` without a persistent cache.
    pub fn embed(
        graph: KnowledgeGraph,
        embedder: Arc<dyn EmbeddingBackend>,
    ) -> Result<Self, ServiceError> {
        let store = ensure_embeddings(&graph, embedder.as_ref(), &EmbeddingCache::in_memory())?;
        Ok(Self::new(graph, store, embedder))
    }

    /// Loads the GraphML file and its embedding sidecar, embedding any
    /// labels the sidecar lacks.
    pub fn load(path: &Path, cfg: &AppConfig) -> Result<Self, ServiceError> {
        let graph = load_graph_file(path, &cfg.graph.options())?;
        let embedder = embedder_for(cfg)?;
        let cache = EmbeddingCache::sidecar_for(path).with_batch_size(cfg.embedding.batch_size);
        let store = ensure_embeddings(&graph, embedder.as_ref(), &cache)?;
        Ok(Self {
            graph,
            store,
            embedder,
            source: Some(path.to_path_buf()),
        })
    }

    /// Loads the graph named in the configuration.
    pub fn from_config(cfg: &AppConfig) -> Result<Self, ServiceError> {
        let path = cfg.graph.path.as_deref().ok_or_else(|| {
            ServiceError::State("no graph configured; set graph.path or pass --graph".into())
        })?;
        Self::load(path, cfg)
    }

    pub fn engine(&self) -> Engine<'_> {
        Engine {
            graph: &self.graph,
            store: &self.store,
            embedder: self.embedder.as_ref(),
        }
    }

    pub fn stats(&self) -> GraphStats {
        let g = &self.graph;
        let mut comp = vec![usize::MAX; g.node_count()];
        let mut components = 0;
        for start in g.indices() {
            if comp[start.index()] != usize::MAX {
                continue;
            }
            comp[start.index()] = components;
            let mut stack = vec![start];
            while let Some(v) = stack.pop() {
                for &w in g.neighbors(v) {
                    if comp[w.index()] == usize::MAX {
                        comp[w.index()] = components;
                        stack.push(w);
                    }
                }
            }
            components += 1;
        }
        GraphStats {
            nodes: g.node_count(),
            edges: g.edge_count(),
            components,
            isolated_nodes: g.indices().filter(|&i| g.neighbors(i).is_empty()).count(),
            embedding_model: self.store.model_tag().to_string(),
            embedding_dimension: self.store.dimension(),
            source: self.source.as_ref().map(|p| p.display().to_string()),
        }
    }

    /// Node id for `text`: an exact id, then an exact label, then the
    /// nearest node in embedding space.
    pub fn resolve_node(&self, text: &str) -> Result<String, ServiceError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(ServiceError::Validation("node reference is empty".into()));
        }
        if self.graph.index_of(text).is_some() {
            return Ok(text.to_string());
        }
        if let Some(idx) = self.graph.find_by_label(text) {
            return Ok(self.graph.id(idx).to_string());
        }
        let (id, _) = nearest_node(&self.graph, &self.store, text, self.embedder.as_ref())?;
        Ok(id)
    }

    /// Path between two node references under `cfg`.
    pub fn path(&self, from: &str, to: &str, cfg: &PathConfig) -> Result<PathSample, ServiceError> {
        cfg.validate()?;
        let s = self.resolve_node(from)?;
        let t = self.resolve_node(to)?;
        Ok(find_path(&self.graph, &self.store, &s, &t, cfg)?)
    }
}
