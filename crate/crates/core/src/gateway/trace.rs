use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Request {
        request: ChatRequest,
    },
    Response {
        response: ChatResponse,
    },
    Error {
        message: String,
    },
    /// One HTTP attempt made by a retrying backend.
    Attempt {
        attempt: u32,
        url: String,
        status: Option<u16>,
        error: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    #[serde(flatten)]
    pub event: TraceEvent,
}

/// Append-only record of backend traffic, optionally mirrored to a JSON-lines
/// file. Appends are serialized through one lock.
#[derive(Debug, Default)]
pub struct TraceLog {
    inner: Mutex<TraceInner>,
}

#[derive(Debug, Default)]
struct TraceInner {
    records: Vec<TraceRecord>,
    sink: Option<File>,
    /// Records already in the sink file when it was opened.
    offset: u64,
}

impl TraceLog {
    pub fn in_memory() -> Arc<Self> {
        Arc::new(Self::default())
    }

    /// Trace that also appends every record to `path`. Sequence numbers
    /// continue after the lines already in the file.
    pub fn to_file(path: &Path) -> std::io::Result<Arc<Self>> {
        let offset = match File::open(path) {
            Ok(f) => BufReader::new(f)
                .lines()
                .map_while(Result::ok)
                .filter(|l| !l.trim().is_empty())
                .count() as u64,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => 0,
            Err(e) => return Err(e),
        };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Arc::new(Self {
            inner: Mutex::new(TraceInner {
                records: Vec::new(),
                sink: Some(file),
                offset,
            }),
        }))
    }

    pub fn append(&self, event: TraceEvent) {
        let mut inner = self.inner.lock().unwrap();
        let record = TraceRecord {
            seq: inner.offset + inner.records.len() as u64,
            event,
        };
        if let Some(f) = inner.sink.as_mut() {
            let line = serde_json::to_string(&record).expect("trace records serialize");
            if let Err(e) = writeln!(f, "{line}") {
                tracing::error!(error = %e, "failed to write trace record");
            }
        }
        inner.records.push(record);
    }

    pub fn records(&self) -> Vec<TraceRecord> {
        self.inner.lock().unwrap().records.clone()
    }

    pub fn attempts(&self) -> usize {
        self.inner
            .lock()
            .unwrap()
            .records
            .iter()
            .filter(|r| matches!(r.event, TraceEvent::Attempt { .. }))
            .count()
    }

    pub fn read_file(path: &Path) -> Result<Vec<TraceRecord>, GatewayError> {
        let file = File::open(path)
            .map_err(|e| GatewayError::Replay(format!("cannot open {}: {e}", path.display())))?;
        let mut out = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| GatewayError::Replay(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line)
                .map_err(|e| GatewayError::Replay(format!("{}:{}: {e}", path.display(), n + 1)))?;
            out.push(rec);
        }
        Ok(out)
    }
}

/// Wraps a backend so that each request and its outcome land in a trace.
pub struct TracedChat<B> {
    inner: B,
    trace: Arc<TraceLog>,
}

impl<B: ChatBackend> TracedChat<B> {
    pub fn new(inner: B, trace: Arc<TraceLog>) -> Self {
        Self { inner, trace }
    }

    pub fn trace(&self) -> &Arc<TraceLog> {
        &self.trace
    }
}

impl<B: ChatBackend> ChatBackend for TracedChat<B> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.trace.append(TraceEvent::Request {
            request: req.clone(),
        });
        let out = self.inner.complete(req);
        match &out {
            Ok(r) => self.trace.append(TraceEvent::Response {
                response: r.clone(),
            }),
            Err(e) => self.trace.append(TraceEvent::Error {
                message: e.to_string(),
            }),
        }
        out
    }
}

/// Serves the responses of a previously recorded trace, in order.
///
/// In strict mode each incoming request must equal the recorded request that
/// preceded the response being served.
#[derive(Debug)]
pub struct ReplayBackend {
    queue: Mutex<VecDeque<(Option<ChatRequest>, ChatResponse)>>,
    strict: bool,
}

impl ReplayBackend {
    pub fn from_records(records: &[TraceRecord]) -> Self {
        let mut queue = VecDeque::new();
        let mut pending: Option<ChatRequest> = None;
        for r in records {
            match &r.event {
                TraceEvent::Request { request } => pending = Some(request.clone()),
                TraceEvent::Response { response } => {
                    queue.push_back((pending.take(), response.clone()))
                }
                _ => {}
            }
        }
        Self {
            queue: Mutex::new(queue),
            strict: false,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self::from_records(&TraceLog::read_file(path)?))
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let mut q = self.queue.lock().unwrap();
        let (recorded, response) = q
            .pop_front()
            .ok_or_else(|| GatewayError::Replay("trace has no further responses".into()))?;
        if self.strict {
            match recorded {
                Some(r) if &r == req => {}
                _ => {
                    return Err(GatewayError::Replay(
                        "request diverges from the recorded trace".into(),
                    ))
                }
            }
        }
        Ok(response)
    }
}

/// Serves recorded responses while incoming requests match the recording
/// exactly, then hands every later request to `live`.
///
/// Re-running a deterministic orchestration over a persisted trace thus
/// reproduces its prefix without new backend traffic and continues live.
pub struct ResumeBackend<B> {
    recorded: Mutex<VecDeque<(ChatRequest, ChatResponse)>>,
    live: B,
    replayed: Mutex<usize>,
}

impl<B: ChatBackend> ResumeBackend<B> {
    pub fn new(records: &[TraceRecord], live: B) -> Self {
        let mut recorded = VecDeque::new();
        let mut pending: Option<ChatRequest> = None;
        for r in records {
            match &r.event {
                TraceEvent::Request { request } => pending = Some(request.clone()),
                TraceEvent::Response { response } => {
                    if let Some(req) = pending.take() {
                        recorded.push_back((req, response.clone()));
                    }
                }
                TraceEvent::Error { .. } => pending = None,
                TraceEvent::Attempt { .. } => {}
            }
        }
        Self {
            recorded: Mutex::new(recorded),
            live,
            replayed: Mutex::new(0),
        }
    }

    /// Responses served from the recording so far.
    pub fn replayed(&self) -> usize {
        *self.replayed.lock().unwrap()
    }

    /// Recorded responses not yet served.
    pub fn pending(&self) -> usize {
        self.recorded.lock().unwrap().len()
    }
}

impl<B: ChatBackend> ChatBackend for ResumeBackend<B> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        {
            let mut q = self.recorded.lock().unwrap();
            match q.front() {
                Some((r, _)) if r == req => {
                    let (_, resp) = q.pop_front().expect("front exists");
                    *self.replayed.lock().unwrap() += 1;
                    return Ok(resp);
                }
                Some(_) => {
                    tracing::warn!(
                        remaining = q.len(),
                        "request diverges from recorded trace; continuing live"
                    );
                    q.clear();
                }
                None => {}
            }
        }
        self.live.complete(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatMessage, ScriptedBackend};

    #[test]
    fn replay_reproduces_recorded_session() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        let trace = TraceLog::to_file(&path).unwrap();
        let live = TracedChat::new(ScriptedBackend::new(["one", "two"]), trace.clone());
        let r1 = ChatRequest::new(vec![ChatMessage::user("a")]);
        let r2 = ChatRequest::new(vec![ChatMessage::user("b")]);
        let out1 = live.complete(&r1).unwrap();
        let out2 = live.complete(&r2).unwrap();

        let replay = ReplayBackend::from_file(&path).unwrap().strict(true);
        assert_eq!(replay.complete(&r1).unwrap(), out1);
        assert_eq!(replay.complete(&r2).unwrap(), out2);
        assert!(replay.complete(&r2).is_err());
        assert_eq!(TraceLog::read_file(&path).unwrap(), trace.records());
    }

    #[test]
    fn resume_replays_prefix_then_goes_live() {
        let trace = TraceLog::in_memory();
        let first = TracedChat::new(ScriptedBackend::new(["one"]), trace.clone());
        let r1 = ChatRequest::new(vec![ChatMessage::user("a")]);
        let r2 = ChatRequest::new(vec![ChatMessage::user("b")]);
        first.complete(&r1).unwrap();
        let live = ScriptedBackend::new(["two"]);
        let resumed = ResumeBackend::new(&trace.records(), &live);
        assert_eq!(resumed.complete(&r1).unwrap().content, "one");
        assert_eq!(resumed.complete(&r2).unwrap().content, "two");
        assert_eq!(resumed.replayed(), 1);
        assert_eq!(live.served(), 1);
    }

    #[test]
    fn strict_replay_rejects_divergent_prompt() {
        let trace = TraceLog::in_memory();
        let live = TracedChat::new(ScriptedBackend::new(["x"]), trace.clone());
        live.complete(&ChatRequest::new(vec![ChatMessage::user("a")]))
            .unwrap();
        let replay = ReplayBackend::from_records(&trace.records()).strict(true);
        assert!(replay
            .complete(&ChatRequest::new(vec![ChatMessage::user("changed")]))
            .is_err());
    }
}
