use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{with_retry, AttemptError, RetryError, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub title: String,
    #[serde(rename = "abstract", default, skip_serializing_if = "Option::is_none")]
    pub abstract_text: Option<String>,
    pub paper_id: String,
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("literature search unavailable after {attempts} attempt(s): {last_error}")]
    Unavailable { attempts: u32, last_error: String },
    #[error("literature search protocol error: {message}")]
    Protocol { message: String, raw_body: String },
}

pub trait LiteratureSearch: Send + Sync {
    /// At most `limit` records, most relevant first.
    fn search(&self, query: &str, limit: usize) -> Result<Vec<PaperRecord>, SearchError>;
}

impl<T: LiteratureSearch + ?Sized> LiteratureSearch for Arc<T> {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<PaperRecord>, SearchError> {
        (**self).search(query, limit)
    }
}

/// Enforces a minimum gap between consecutive requests across all clients
/// sharing it.
#[derive(Debug)]
pub struct RateLimiter {
    min_gap: Duration,
    last: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(min_gap: Duration) -> Self {
        Self {
            min_gap,
            last: Mutex::new(None),
        }
    }

    /// Blocks until the next request may be sent and reserves that slot.
    pub fn acquire(&self) {
        let mut last = self.last.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(prev) = *last {
            let ready = prev + self.min_gap;
            let now = Instant::now();
            if ready > now {
                std::thread::sleep(ready - now);
            }
        }
        *last = Some(Instant::now());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub base_url: String,
    /// Environment variable holding an optional API key.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
    pub min_interval_ms: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.semanticscholar.org".into(),
            api_key_env: Some("S2_API_KEY".into()),
            timeout_secs: 30,
            retry: RetryPolicy::default(),
            min_interval_ms: 1100,
        }
    }
}

/// Client for the Semantic Scholar Graph API paper search.
pub struct SemanticScholarClient {
    client: Client,
    config: SearchConfig,
    api_key: Option<String>,
    limiter: Arc<RateLimiter>,
    requests: AtomicUsize,
}

impl SemanticScholarClient {
    pub fn new(config: SearchConfig) -> Result<Self, SearchError> {
        let limiter = Arc::new(RateLimiter::new(Duration::from_millis(
            config.min_interval_ms,
        )));
        Self::with_limiter(config, limiter)
    }

    pub fn with_limiter(
        config: SearchConfig,
        limiter: Arc<RateLimiter>,
    ) -> Result<Self, SearchError> {
        if config.retry.max_attempts == 0 {
            return Err(SearchError::Argument(
                "retry.max_attempts must be >= 1".into(),
            ));
        }
        let client = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| SearchError::Argument(format!("cannot build HTTP client: {e}")))?;
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|v| std::env::var(v).ok())
            .filter(|k| !k.is_empty());
        Ok(Self {
            client,
            config,
            api_key,
            limiter,
            requests: AtomicUsize::new(0),
        })
    }

    /// HTTP requests sent so far, retries included.
    pub fn requests_sent(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

pub(crate) fn parse_search_response(
    raw: &str,
    limit: usize,
) -> Result<Vec<PaperRecord>, SearchError> {
    let protocol = |message: String| SearchError::Protocol {
        message,
        raw_body: raw.to_string(),
    };
    let v: Value = serde_json::from_str(raw).map_err(|e| protocol(format!("invalid JSON: {e}")))?;
    let data = match v.get("data") {
        Some(Value::Array(items)) => items.as_slice(),
        None if v.get("total").and_then(Value::as_u64) == Some(0) => &[],
        _ => return Err(protocol("response has no data array".into())),
    };
    Ok(data
        .iter()
        .filter_map(|item| {
            let title = item.get("title")?.as_str()?.trim();
            if title.is_empty() {
                return None;
            }
            Some(PaperRecord {
                title: title.to_string(),
                abstract_text: item
                    .get("abstract")
                    .and_then(Value::as_str)
                    .map(str::trim)
                    .filter(|a| !a.is_empty())
                    .map(str::to_string),
                paper_id: item
                    .get("paperId")
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_string(),
            })
        })
        .take(limit)
        .collect())
}

impl LiteratureSearch for SemanticScholarClient {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<PaperRecord>, SearchError> {
        let query = query.trim();
        if query.is_empty() {
            return Err(SearchError::Argument("search query is empty".into()));
        }
        if limit == 0 {
            return Err(SearchError::Argument("limit must be positive".into()));
        }
        let url = format!(
            "{}/graph/v1/paper/search",
            self.config.base_url.trim_end_matches('/')
        );
        let limit_text = limit.to_string();
        let outcome = with_retry(&self.config.retry, |_| {
            self.limiter.acquire();
            self.requests.fetch_add(1, Ordering::SeqCst);
            let mut rb = self.client.get(&url).query(&[
                ("query", query),
                ("limit", &limit_text),
                ("fields", "title,abstract"),
            ]);
            if let Some(key) = &self.api_key {
                rb = rb.header("x-api-key", key);
            }
            let resp = rb
                .send()
                .map_err(|e| AttemptError::Transient(e.to_string()))?;
            let status = resp.status();
            let body = resp.text().unwrap_or_default();
            if status.is_success() {
                Ok(body)
            } else if status.as_u16() == 429 || status.is_server_error() {
                Err(AttemptError::Transient(format!("HTTP {status}")))
            } else {
                Err(AttemptError::Fatal(SearchError::Protocol {
                    message: format!("HTTP {status}"),
                    raw_body: body,
                }))
            }
        });
        let raw = outcome.map_err(|e| match e {
            RetryError::Exhausted {
                attempts,
                last_error,
            } => SearchError::Unavailable {
                attempts,
                last_error,
            },
            RetryError::Fatal(e) => e,
        })?;
        parse_search_response(&raw, limit)
    }
}

/// In-memory search for tests and offline runs. Unknown queries return an
/// empty list; queries listed in `failing` always fail.
#[derive(Debug, Default)]
pub struct StaticSearch {
    results: HashMap<String, Vec<PaperRecord>>,
    failing: Vec<String>,
    calls: Mutex<Vec<String>>,
    counter: AtomicUsize,
}

impl StaticSearch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_results(mut self, query: &str, records: Vec<PaperRecord>) -> Self {
        self.results.insert(query.to_lowercase(), records);
        self
    }

    pub fn failing_on(mut self, query: &str) -> Self {
        self.failing.push(query.to_lowercase());
        self
    }

    pub fn calls(&self) -> Vec<String> {
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl LiteratureSearch for StaticSearch {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<PaperRecord>, SearchError> {
        if query.trim().is_empty() {
            return Err(SearchError::Argument("search query is empty".into()));
        }
        self.counter.fetch_add(1, Ordering::SeqCst);
        self.calls
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(query.to_string());
        let key = query.trim().to_lowercase();
        if self.failing.contains(&key) {
            return Err(SearchError::Unavailable {
                attempts: 1,
                last_error: "scripted failure".into(),
            });
        }
        Ok(self
            .results
            .get(&key)
            .map(|r| r.iter().take(limit).cloned().collect())
            .unwrap_or_default())
    }
}
