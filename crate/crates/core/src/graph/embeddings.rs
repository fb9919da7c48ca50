//! Node embeddings and the persistent JSON-lines cache.
//!
//! Cache layout: the first line is a header object
//! `{"format":"hypograph-embeddings","version":1,"model_tag":...,"dimension":...}`,
//! each following line is `{"id":...,"label":...,"vector":[...]}`. Records are
//! only ever appended. A header with a different `model_tag` discards the
//! whole file; a vector whose length differs from the header dimension makes
//! the cache invalid.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{KnowledgeGraph, NodeIdx};
use crate::gateway::{normalize, EmbeddingBackend, GatewayError};

pub const CACHE_FORMAT: &str = "hypograph-embeddings";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("embedding cache {path} is invalid: {reason}")]
    CacheInvalid { path: String, reason: String },
    #[error("embedding cache i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("embeddings missing for {} node(s) ({}): {cause}", uncovered.len(), preview(uncovered))]
    PartialFailure {
        uncovered: Vec<String>,
        cause: String,
    },
    #[error("embedding store does not match the graph: {0}")]
    StoreMismatch(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

fn preview(ids: &[String]) -> String {
    let mut s = ids.iter().take(10).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > 10 {
        s.push_str(", ...");
    }
    s
}

/// Unit-normalized vectors for every node of one graph, indexed by
/// [`NodeIdx`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dimension: usize,
    model_tag: String,
    vectors: Vec<Vec<f32>>,
}

impl EmbeddingStore {
    /// Builds a store from per-id vectors, normalizing each one.
    pub fn from_vectors(
        g: &KnowledgeGraph,
        model_tag: &str,
        mut by_id: HashMap<String, Vec<f32>>,
    ) -> Result<Self, EmbeddingError> {
        let mut vectors = Vec::with_capacity(g.node_count());
        let mut missing = Vec::new();
        let mut dimension = None;
        for n in g.nodes() {
            match by_id.remove(&n.id) {
                Some(v) => {
                    let d = *dimension.get_or_insert(v.len());
                    if v.len() != d || d == 0 {
                        return Err(EmbeddingError::StoreMismatch(format!(
                            "vector for `{}` has dimension {}, expected {d}",
                            n.id,
                            v.len()
                        )));
                    }
                    vectors.push(normalize(v)?);
                }
                None => missing.push(n.id.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(EmbeddingError::StoreMismatch(format!(
                "no vector for {} node(s): {}",
                missing.len(),
                preview(&missing)
            )));
        }
        Ok(Self {
            dimension: dimension.unwrap_or(0),
            model_tag: model_tag.to_string(),
            vectors,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, idx: NodeIdx) -> &[f32] {
        &self.vectors[idx.index()]
    }

    /// Cosine similarity of two nodes, clamped to [-1, 1].
    pub fn similarity(&self, a: NodeIdx, b: NodeIdx) -> f64 {
        cosine(self.vector(a), self.vector(b))
    }

    pub fn check_covers(&self, g: &KnowledgeGraph) -> Result<(), EmbeddingError> {
        if self.vectors.len() != g.node_count() {
            return Err(EmbeddingError::StoreMismatch(format!(
                "store holds {} vectors, graph has {} nodes",
                self.vectors.len(),
                g.node_count()
            )));
        }
        Ok(())
    }
}

/// Dot product of unit vectors accumulated in f64, clamped to [-1, 1].
pub(crate) fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    dot.clamp(-1.0, 1.0)
}

/// Where and how node embeddings are cached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingCache {
    path: Option<PathBuf>,
    batch_size: usize,
}

impl EmbeddingCache {
    pub const DEFAULT_BATCH_SIZE: usize = 64;

    /// Cache stored at `path`.
    pub fn at(path: impl Into<PathBuf>) -> Self {
        Self {
            path: Some(path.into()),
            batch_size: Self::DEFAULT_BATCH_SIZE,
        }
    }

    /// Sidecar next to a graph file: `<graph file name>.embeddings.jsonl`.
    pub fn sidecar_for(graph_path: &Path) -> Self {
        let mut name = graph_path.file_name().unwrap_or_default().to_os_string();
        name.push(".embeddings.jsonl");
        Self::at(graph_path.with_file_name(name))
    }

    /// No persistence; every call embeds the whole graph.
    pub fn in_memory() -> Self {
        Self {
            path: None,
            batch_size: Self::DEFAULT_BATCH_SIZE,
        }
    }

    /// Number of distinct labels sent per backend call (at least 1).
    pub fn with_batch_size(mut self, n: usize) -> Self {
        self.batch_size = n.max(1);
        self
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    model_tag: String,
    dimension: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    label: String,
    vector: Vec<f32>,
}

struct Loaded {
    dimension: Option<usize>,
    records: HashMap<String, (String, Vec<f32>)>,
    // the file must be rewritten before appending (stale model or torn tail)
    rewrite: bool,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EmbeddingError + '_ {
    move |source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn invalid(path: &Path, reason: String) -> EmbeddingError {
    EmbeddingError::CacheInvalid {
        path: path.display().to_string(),
        reason,
    }
}

fn read_cache(path: &Path, model_tag: &str) -> Result<Loaded, EmbeddingError> {
    let empty = |rewrite| Loaded {
        dimension: None,
        records: HashMap::new(),
        rewrite,
    };
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(empty(false)),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut lines = Vec::new();
    let mut reader = BufReader::new(file);
    loop {
        let mut buf = String::new();
        let n = reader.read_line(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        lines.push(buf);
    }
    let Some(first) = lines.first() else {
        return Ok(empty(true));
    };
    let header: Header = match serde_json::from_str(first.trim_end()) {
        Ok(h) => h,
        Err(e) if !first.ends_with('\n') => {
            tracing::warn!(path = %path.display(), error = %e, "torn embedding cache header, rebuilding");
            return Ok(empty(true));
        }
        Err(e) => return Err(invalid(path, format!("line 1: bad header: {e}"))),
    };
    if header.format != CACHE_FORMAT || header.version != CACHE_VERSION {
        return Err(invalid(
            path,
            format!("unsupported format {} v{}", header.format, header.version),
        ));
    }
    if header.model_tag != model_tag {
        tracing::info!(
            path = %path.display(),
            cached = %header.model_tag,
            configured = %model_tag,
            "embedding model changed, discarding cache"
        );
        return Ok(empty(true));
    }
    if header.dimension == 0 {
        return Err(invalid(path, "header dimension is 0".into()));
    }

    let mut records = HashMap::new();
    let mut rewrite = false;
    let last = lines.len() - 1;
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = match serde_json::from_str(line.trim_end()) {
            Ok(r) => r,
            Err(_) if i == last && !line.ends_with('\n') => {
                rewrite = true;
                break;
            }
            Err(e) => return Err(invalid(path, format!("line {}: {e}", i + 1))),
        };
        if rec.vector.len() != header.dimension {
            return Err(invalid(
                path,
                format!(
                    "line {}: vector for `{}` has dimension {}, header says {}",
                    i + 1,
                    rec.id,
                    rec.vector.len(),
                    header.dimension
                ),
            ));
        }
        records.insert(rec.id, (rec.label, rec.vector));
    }
    Ok(Loaded {
        dimension: Some(header.dimension),
        records,
        rewrite,
    })
}

struct CacheWriter<'a> {
    path: &'a Path,
    file: Option<File>,
    model_tag: &'a str,
}

impl CacheWriter<'_> {
    fn write_line(
        file: &mut File,
        path: &Path,
        value: &impl Serialize,
    ) -> Result<(), EmbeddingError> {
        let mut line = serde_json::to_string(value).expect("cache records serialize");
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(io_err(path))
    }

    fn start_fresh(
        &mut self,
        dimension: usize,
        existing: &BTreeMap<&str, (&str, &[f32])>,
    ) -> Result<(), EmbeddingError> {
        let mut f = File::create(self.path).map_err(io_err(self.path))?;
        let header = Header {
            format: CACHE_FORMAT.into(),
            version: CACHE_VERSION,
            model_tag: self.model_tag.to_string(),
            dimension,
        };
        Self::write_line(&mut f, self.path, &header)?;
        for (id, (label, v)) in existing {
            let rec = Record {
                id: id.to_string(),
                label: label.to_string(),
                vector: v.to_vec(),
            };
            Self::write_line(&mut f, self.path, &rec)?;
        }
        self.file = Some(f);
        Ok(())
    }

    fn open_append(&mut self) -> Result<(), EmbeddingError> {
        let f = OpenOptions::new()
            .append(true)
            .open(self.path)
            .map_err(io_err(self.path))?;
        self.file = Some(f);
        Ok(())
    }

    fn append(&mut self, rec: &Record) -> Result<(), EmbeddingError> {
        let f = self.file.as_mut().expect("writer opened before append");
        Self::write_line(f, self.path, rec)
    }

    fn finish(self) -> Result<(), EmbeddingError> {
        if let Some(f) = self.file {
            f.sync_all().map_err(io_err(self.path))?;
        }
        Ok(())
    }
}

/// Ensures every node label has a unit vector, reusing cached vectors and
/// embedding the rest in batches of distinct labels.
///
/// Newly computed vectors are appended to the cache as soon as each batch
/// succeeds, so a later run resumes where a failed one stopped.
pub fn ensure_embeddings(
    g: &KnowledgeGraph,
    backend: &dyn EmbeddingBackend,
    cache: &EmbeddingCache,
) -> Result<EmbeddingStore, EmbeddingError> {
    let model_tag = backend.model_tag().to_string();
    let mut loaded = match cache.path() {
        Some(p) => read_cache(p, &model_tag)?,
        None => Loaded {
            dimension: None,
            records: HashMap::new(),
            rewrite: false,
        },
    };

    let mut vectors: Vec<Option<Vec<f32>>> = vec![None; g.node_count()];
    // distinct labels still to embed, in first-seen order, with their nodes
    let mut pending: Vec<(String, Vec<NodeIdx>)> = Vec::new();
    let mut pending_pos: HashMap<&str, usize> = HashMap::new();
    for idx in g.indices() {
        let n = g.node(idx);
        match loaded.records.get(&n.id) {
            Some((label, v)) if *label == n.label => {
                vectors[idx.index()] = Some(normalize(v.clone())?)
            }
            _ => {
                let key = n.label.trim();
                match pending_pos.get(key) {
                    Some(&p) => pending[p].1.push(idx),
                    None => {
                        pending_pos.insert(key, pending.len());
                        pending.push((key.to_string(), vec![idx]));
                    }
                }
            }
        }
    }

    let mut dimension = loaded.dimension;
    let mut writer = cache.path().map(|path| CacheWriter {
        path,
        file: None,
        model_tag: &model_tag,
    });
    let mut failures: Vec<String> = Vec::new();

    for batch in pending.chunks(cache.batch_size()) {
        let texts: Vec<String> = batch.iter().map(|(label, _)| label.clone()).collect();
        let embedded = match backend.embed(&texts) {
            Ok(v) => v,
            Err(e) => {
                tracing::warn!(error = %e, batch = texts.len(), "embedding batch failed");
                failures.push(e.to_string());
                continue;
            }
        };
        for ((_, nodes), v) in batch.iter().zip(embedded) {
            match dimension {
                None => dimension = Some(v.len()),
                Some(d) if d != v.len() => {
                    let reason = format!("backend returned dimension {}, expected {d}", v.len());
                    return Err(match cache.path() {
                        Some(p) => invalid(p, reason),
                        None => EmbeddingError::StoreMismatch(reason),
                    });
                }
                Some(_) => {}
            }
            if let Some(w) = writer.as_mut() {
                if w.file.is_none() {
                    if loaded.dimension.is_none() || loaded.rewrite {
                        let keep: BTreeMap<&str, (&str, &[f32])> = if loaded.rewrite {
                            loaded
                                .records
                                .iter()
                                .map(|(id, (l, v))| (id.as_str(), (l.as_str(), v.as_slice())))
                                .collect()
                        } else {
                            BTreeMap::new()
                        };
                        w.start_fresh(v.len(), &keep)?;
                        loaded.rewrite = false;
                    } else {
                        w.open_append()?;
                    }
                }
                for &idx in nodes {
                    let n = g.node(idx);
                    w.append(&Record {
                        id: n.id.clone(),
                        label: n.label.clone(),
                        vector: v.clone(),
                    })?;
                }
            }
            for &idx in nodes {
                vectors[idx.index()] = Some(v.clone());
            }
        }
    }
    if let Some(w) = writer {
        w.finish()?;
    }

    let uncovered: Vec<String> = g
        .indices()
        .filter(|i| vectors[i.index()].is_none())
        .map(|i| g.id(i).to_string())
        .collect();
    if !uncovered.is_empty() {
        return Err(EmbeddingError::PartialFailure {
            uncovered,
            cause: failures.join("; "),
        });
    }
    Ok(EmbeddingStore {
        dimension: dimension.unwrap_or(0),
        model_tag,
        vectors: vectors
            .into_iter()
            .map(|v| v.expect("all covered"))
            .collect(),
    })
}

/// Node whose embedding is most similar to the embedded `query`.
///
/// The query is trimmed first. Ties go to the lexicographically smallest id.
pub fn nearest_node(
    g: &KnowledgeGraph,
    store: &EmbeddingStore,
    query: &str,
    backend: &dyn EmbeddingBackend,
) -> Result<(String, f64), EmbeddingError> {
    let query = query.trim();
    if query.is_empty() {
        return Err(EmbeddingError::Argument("query is empty".into()));
    }
    if g.node_count() == 0 {
        return Err(EmbeddingError::EmptyInput("graph has no nodes".into()));
    }
    store.check_covers(g)?;
    let q = backend
        .embed(&[query.to_string()])?
        .pop()
        .ok_or_else(|| EmbeddingError::Argument("backend returned no vector".into()))?;
    if q.len() != store.dimension() {
        return Err(EmbeddingError::StoreMismatch(format!(
            "query vector has dimension {}, store has {}",
            q.len(),
            store.dimension()
        )));
    }
    let (best, sim) = nearest_to_vector(g, store, &q);
    Ok((g.id(best).to_string(), sim))
}

/// Arg-max of cosine similarity over all nodes; ties by smallest id.
pub(crate) fn nearest_to_vector(
    g: &KnowledgeGraph,
    store: &EmbeddingStore,
    q: &[f32],
) -> (NodeIdx, f64) {
    let mut best: Option<(NodeIdx, f64)> = None;
    for idx in g.indices() {
        let s = cosine(store.vector(idx), q);
        best = match best {
            Some((b, bs)) if bs > s || (bs == s && g.id_rank(b) < g.id_rank(idx)) => Some((b, bs)),
            _ => Some((idx, s)),
        };
    }
    best.expect("graph is non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::StaticEmbedder;
    use crate::graph::fixtures::graph;

    fn abc() -> KnowledgeGraph {
        graph(
            &[("a", "alpha"), ("b", "beta"), ("c", "gamma")],
            &[("a", "b", "r"), ("b", "c", "s")],
        )
    }

    fn embedder() -> StaticEmbedder {
        StaticEmbedder::new([
            ("alpha", vec![1.0, 0.0, 0.0]),
            ("beta", vec![0.0, 2.0, 0.0]),
            ("gamma", vec![0.0, 0.0, 3.0]),
            ("alphabet", vec![1.0, 1.0, 0.0]),
        ])
    }

    #[test]
    fn in_memory_store_is_normalized() {
        let e = embedder();
        let s = ensure_embeddings(&abc(), &e, &EmbeddingCache::in_memory()).unwrap();
        assert_eq!(s.dimension(), 3);
        for i in abc().indices() {
            let n: f64 = s.vector(i).iter().map(|&x| f64::from(x).powi(2)).sum();
            assert!((n.sqrt() - 1.0).abs() <= 1e-6);
        }
        assert_eq!(e.calls(), 1);
    }

    #[test]
    fn cache_hit_skips_backend() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::at(dir.path().join("g.embeddings.jsonl")).with_batch_size(1);
        let e = embedder();
        let first = ensure_embeddings(&abc(), &e, &cache).unwrap();
        assert_eq!(e.calls(), 3);
        let e2 = embedder();
        let second = ensure_embeddings(&abc(), &e2, &cache).unwrap();
        assert_eq!(e2.calls(), 0);
        assert_eq!(first, second);
    }

    #[test]
    fn model_change_discards_cache() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::at(dir.path().join("c.jsonl"));
        ensure_embeddings(&abc(), &embedder(), &cache).unwrap();
        let other = embedder().with_tag("other");
        ensure_embeddings(&abc(), &other, &cache).unwrap();
        assert_eq!(other.calls(), 1);
        let text = std::fs::read_to_string(cache.path().unwrap()).unwrap();
        assert!(text
            .lines()
            .next()
            .unwrap()
            .contains("\"model_tag\":\"other\""));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn dimension_mismatch_is_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            "{\"format\":\"hypograph-embeddings\",\"version\":1,\"model_tag\":\"static\",\"dimension\":2}\n\
             {\"id\":\"a\",\"label\":\"alpha\",\"vector\":[1.0,0.0,0.0]}\n",
        )
        .unwrap();
        let err = ensure_embeddings(&abc(), &embedder(), &EmbeddingCache::at(&path)).unwrap_err();
        assert!(matches!(err, EmbeddingError::CacheInvalid { .. }), "{err}");
    }

    #[test]
    fn failed_batches_list_uncovered_ids() {
        let e = StaticEmbedder::new([("alpha", vec![1.0, 0.0])]);
        let err = ensure_embeddings(&abc(), &e, &EmbeddingCache::in_memory().with_batch_size(1))
            .unwrap_err();
        match err {
            EmbeddingError::PartialFailure { uncovered, .. } => {
                assert_eq!(uncovered, vec!["b", "c"])
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_labels_embedded_once() {
        let g = graph(&[("x", "alpha"), ("y", "alpha")], &[]);
        let e = embedder();
        let s = ensure_embeddings(&g, &e, &EmbeddingCache::in_memory()).unwrap();
        assert_eq!(e.texts_embedded(), 1);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn nearest_trims_and_breaks_ties_by_id() {
        let g = abc();
        let e = embedder();
        let s = ensure_embeddings(&g, &e, &EmbeddingCache::in_memory()).unwrap();
        let (id, sim) = nearest_node(&g, &s, "  beta ", &e).unwrap();
        assert_eq!(id, "b");
        assert!((sim - 1.0).abs() <= 1e-6);
        // equidistant from alpha and beta
        let (id, _) = nearest_node(&g, &s, "alphabet", &e).unwrap();
        assert_eq!(id, "a");
        assert!(matches!(
            nearest_node(&g, &s, "  ", &e),
            Err(EmbeddingError::Argument(_))
        ));
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::at(dir.path().join("c.jsonl"));
        ensure_embeddings(&abc(), &embedder(), &cache).unwrap();
        let p = cache.path().unwrap();
        let mut text = std::fs::read_to_string(p).unwrap();
        let cut = text.trim_end().rfind('\n').unwrap() + 10;
        text.truncate(cut);
        std::fs::write(p, &text).unwrap();
        let e = embedder();
        ensure_embeddings(&abc(), &e, &cache).unwrap();
        assert_eq!(e.texts_embedded(), 1);
        let again = embedder();
        ensure_embeddings(&abc(), &again, &cache).unwrap();
        assert_eq!(again.calls(), 0);
    }
}
