use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::GatewayError;

/// Scales `v` to unit L2 norm. Fails on zero or non-finite vectors.
pub fn normalize(mut v: Vec<f32>) -> Result<Vec<f32>, GatewayError> {
    let norm = v
        .iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(GatewayError::Protocol {
            message: "embedding vector cannot be normalized".into(),
            raw_body: format!("{v:?}"),
        });
    }
    for x in &mut v {
        *x = (f64::from(*x) / norm) as f32;
    }
    Ok(v)
}

pub trait EmbeddingBackend: Send + Sync {
    /// Identifies the embedding model; persisted caches are keyed on it.
    fn model_tag(&self) -> &str;

    /// One raw vector per input text, in input order.
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError>;

    /// Validated, order-preserving, unit-normalized embeddings.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::Argument("no texts to embed".into()));
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(GatewayError::Argument(format!("text #{i} is empty")));
        }
        let raw = self.embed_raw(texts)?;
        if raw.len() != texts.len() {
            return Err(GatewayError::Protocol {
                message: format!(
                    "expected {} vectors, backend returned {}",
                    texts.len(),
                    raw.len()
                ),
                raw_body: String::new(),
            });
        }
        raw.into_iter().map(normalize).collect()
    }
}

impl<T: EmbeddingBackend + ?Sized> EmbeddingBackend for std::sync::Arc<T> {
    fn model_tag(&self) -> &str {
        (**self).model_tag()
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        (**self).embed_raw(texts)
    }
}

/// Offline embedding model: signed feature hashing of lower-cased words and
/// character trigrams. Deterministic across platforms.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
    tag: String,
}

impl HashingEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0);
        Self {
            dimension,
            tag: format!("hashing-trigram-v1/{dimension}"),
        }
    }

    fn fnv1a(bytes: &[u8]) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    fn add(&self, v: &mut [f32], feature: &[u8], weight: f32) {
        let h = Self::fnv1a(feature);
        let idx = (h % self.dimension as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[idx] += sign * weight;
    }

    fn vector(&self, text: &str) -> Vec<f32> {
        let lower = text.trim().to_lowercase();
        let mut v = vec![0.0f32; self.dimension];
        for word in lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
        {
            let mut tagged = b"w:".to_vec();
            tagged.extend_from_slice(word.as_bytes());
            self.add(&mut v, &tagged, 2.0);
            let padded: Vec<char> = format!(" {word} ").chars().collect();
            for tri in padded.windows(3) {
                let s: String = tri.iter().collect();
                self.add(&mut v, s.as_bytes(), 1.0);
            }
        }
        if v.iter().all(|&x| x == 0.0) {
            self.add(&mut v, lower.as_bytes(), 1.0);
        }
        v
    }
}

impl EmbeddingBackend for HashingEmbedder {
    fn model_tag(&self) -> &str {
        &self.tag
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Fixed text-to-vector table; unknown texts are an error. Counts calls.
#[derive(Debug, Default)]
pub struct StaticEmbedder {
    table: HashMap<String, Vec<f32>>,
    tag: String,
    calls: AtomicUsize,
    texts: AtomicUsize,
}

impl StaticEmbedder {
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        Self {
            table: entries.into_iter().map(|(k, v)| (k.into(), v)).collect(),
            tag: "static".into(),
            ..Default::default()
        }
    }

    pub fn with_tag(mut self, tag: &str) -> Self {
        self.tag = tag.to_string();
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn texts_embedded(&self) -> usize {
        self.texts.load(Ordering::SeqCst)
    }
}

impl EmbeddingBackend for StaticEmbedder {
    fn model_tag(&self) -> &str {
        &self.tag
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.texts.fetch_add(texts.len(), Ordering::SeqCst);
        texts
            .iter()
            .map(|t| {
                self.table
                    .get(t.trim())
                    .cloned()
                    .ok_or_else(|| GatewayError::BackendUnavailable {
                        attempts: 1,
                        last_error: format!("no vector for `{t}`"),
                    })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_three_four() {
        let e = StaticEmbedder::new([("x", vec![3.0, 4.0])]);
        let v = e.embed(&["x".to_string()]).unwrap();
        assert!((v[0][0] - 0.6).abs() < 1e-7);
        assert!((v[0][1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn rejects_empty_text() {
        let e = StaticEmbedder::new([("x", vec![1.0])]);
        assert!(matches!(
            e.embed(&[String::new()]),
            Err(GatewayError::Argument(_))
        ));
        assert!(matches!(e.embed(&[]), Err(GatewayError::Argument(_))));
        assert_eq!(e.calls(), 0);
    }

    #[test]
    fn batch_order_is_preserved() {
        let names = ["a", "b", "c", "d", "e"];
        let e = StaticEmbedder::new(
            names
                .iter()
                .enumerate()
                .map(|(i, n)| (n.to_string(), vec![i as f32 + 1.0, 0.0])),
        );
        let mut tagged = StaticEmbedder::new(names.iter().enumerate().map(|(i, n)| {
            let mut v = vec![0.0; 5];
            v[i] = 1.0;
            (n.to_string(), v)
        }));
        tagged = tagged.with_tag("tagging");
        let texts: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        let out = tagged.embed(&texts).unwrap();
        assert_eq!(out.len(), 5);
        for (i, v) in out.iter().enumerate() {
            assert_eq!(v[i], 1.0);
        }
        assert_eq!(e.embed(&texts).unwrap().len(), 5);
    }

    #[test]
    fn hashing_embedder_is_deterministic_and_unit() {
        let h = HashingEmbedder::new(64);
        let a = h.embed(&["silk fibroin".to_string()]).unwrap();
        let b = h.embed(&["  silk fibroin ".to_string()]).unwrap();
        assert_eq!(a, b);
        let norm: f64 = a[0]
            .iter()
            .map(|&x| f64::from(x).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert!(h.embed(&["!!!".to_string()]).is_ok());
    }
}
