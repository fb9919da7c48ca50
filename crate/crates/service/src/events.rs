//! Session records on disk: a small index file and an append-only event log.
//!
//! Layout of one session directory:
//! `index.json` (rewritten on status changes), `events.jsonl` (one
//! [`SessionEvent`] per line, never rewritten), `trace.jsonl` (backend
//! traffic) and, once finished, `document.json` plus the exports.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use hypograph_core::agents::TranscriptEntry;
use hypograph_core::gateway::TraceRecord;
use hypograph_core::path::{PathConfig, PathMode};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

pub const INDEX_FILE: &str = "index.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const DOCUMENT_FILE: &str = "document.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    #[default]
    Scripted,
    GroupChat,
}

impl std::fmt::Display for SessionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SessionMode::Scripted => "scripted",
            SessionMode::GroupChat => "group_chat",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    AwaitingHuman,
    Finished,
    Failed,
}

impl SessionStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionStatus::Finished | SessionStatus::Failed)
    }
}

/// Per-session overrides of the configured defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionOverrides {
    pub alpha: Option<f64>,
    pub waypoints: Option<usize>,
    pub hops: Option<u8>,
    pub seed: Option<u64>,
    pub path_mode: Option<PathMode>,
    pub novelty: Option<bool>,
    pub max_turns: Option<usize>,
    pub parallel_expansions: Option<bool>,
}

/// Body of a session creation request.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionRequest {
    pub mode: SessionMode,
    pub keyword_1: Option<String>,
    pub keyword_2: Option<String>,
    /// Group-chat task; defaults to one built from the keywords.
    pub task: Option<String>,
    pub cfg: SessionOverrides,
}

/// Fully resolved settings of one session, persisted with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub mode: SessionMode,
    pub keyword_1: Option<String>,
    pub keyword_2: Option<String>,
    pub task: Option<String>,
    pub path: PathConfig,
    pub novelty: bool,
    pub max_turns: usize,
    pub parallel_expansions: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionIndex {
    pub id: String,
    pub spec: SessionSpec,
    pub status: SessionStatus,
    pub created_ms: u64,
    pub updated_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Base name of the exported document files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub document_slug: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventPayload {
    Entry {
        entry: TranscriptEntry,
    },
    Status {
        status: SessionStatus,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub session_id: String,
    pub seq: u64,
    #[serde(flatten)]
    pub payload: EventPayload,
}

impl SessionEvent {
    pub fn entry(&self) -> Option<&TranscriptEntry> {
        match &self.payload {
            EventPayload::Entry { entry } => Some(entry),
            EventPayload::Status { .. } => None,
        }
    }

    pub fn status(&self) -> Option<SessionStatus> {
        match &self.payload {
            EventPayload::Status { status, .. } => Some(*status),
            EventPayload::Entry { .. } => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.payload {
            EventPayload::Entry { .. } => "entry",
            EventPayload::Status { .. } => "status",
        }
    }
}

pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Parsed lines of a JSON-lines file whose final line may be torn.
#[derive(Debug)]
pub struct JsonLines<T> {
    pub items: Vec<T>,
    /// Byte length of the intact prefix.
    pub valid_len: u64,
    /// Bytes after the intact prefix (a partial final write).
    pub torn_bytes: u64,
}

/// Reads `path`; a missing file is empty. An unparsable line is tolerated
/// only at the end of the file, where a crash may have cut a write short.
pub fn read_json_lines<T: DeserializeOwned>(path: &Path) -> Result<JsonLines<T>, ServiceError> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(ServiceError::storage(path.display(), e)),
    };
    let mut items = Vec::new();
    let mut pos = 0usize;
    let mut line_no = 0;
    while pos < bytes.len() {
        line_no += 1;
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| pos + i);
        let Some(end) = end else { break };
        let line = &bytes[pos..end];
        if line.iter().all(u8::is_ascii_whitespace) {
            pos = end + 1;
            continue;
        }
        match serde_json::from_slice::<T>(line) {
            Ok(v) => items.push(v),
            Err(e) if end + 1 >= bytes.len() => {
                tracing::warn!(file = %path.display(), line = line_no, error = %e, "dropping torn final line");
                break;
            }
            Err(e) => {
                return Err(ServiceError::storage(
                    format!("{}:{line_no}", path.display()),
                    e,
                ));
            }
        }
        pos = end + 1;
    }
    Ok(JsonLines {
        items,
        valid_len: pos as u64,
        torn_bytes: (bytes.len() - pos) as u64,
    })
}

/// Cuts a torn tail off `path` so that appends start on a fresh line.
fn truncate_to(path: &Path, len: u64) -> Result<(), ServiceError> {
    let f = OpenOptions::new()
        .write(true)
        .open(path)
        .map_err(|e| ServiceError::storage(path.display(), e))?;
    f.set_len(len)
        .map_err(|e| ServiceError::storage(path.display(), e))
}

/// Trace records of a session, repairing a torn tail.
pub fn load_trace(path: &Path) -> Result<Vec<TraceRecord>, ServiceError> {
    let lines = read_json_lines::<TraceRecord>(path)?;
    if lines.torn_bytes > 0 {
        truncate_to(path, lines.valid_len)?;
    }
    Ok(lines.items)
}

/// Single-writer append-only event log.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    next_seq: u64,
}

impl EventLog {
    /// Opens (creating if needed) the log at `path` and returns the events
    /// already in it. A torn final line is cut off.
    pub fn open(path: &Path) -> Result<(Self, Vec<SessionEvent>), ServiceError> {
        let lines = read_json_lines::<SessionEvent>(path)?;
        for (i, w) in lines.items.windows(2).enumerate() {
            if w[1].seq <= w[0].seq {
                return Err(ServiceError::Storage(format!(
                    "{}: event {} has sequence {} after {}",
                    path.display(),
                    i + 1,
                    w[1].seq,
                    w[0].seq
                )));
            }
        }
        if lines.torn_bytes > 0 {
            truncate_to(path, lines.valid_len)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ServiceError::storage(path.display(), e))?;
        let next_seq = lines.items.last().map_or(0, |e| e.seq + 1);
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
                next_seq,
            },
            lines.items,
        ))
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Writes `event` as one line and flushes it.
    pub fn append(&mut self, event: &SessionEvent) -> Result<(), ServiceError> {
        if event.seq < self.next_seq {
            return Err(ServiceError::Storage(format!(
                "event sequence {} is not after {}",
                event.seq,
                self.next_seq.saturating_sub(1)
            )));
        }
        let mut line = serde_json::to_string(event).expect("events serialize");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| ServiceError::storage(self.path.display(), e))?;
        self.next_seq = event.seq + 1;
        Ok(())
    }
}

/// Replaces `path` atomically with the pretty JSON of `value`.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), ServiceError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text).map_err(|e| ServiceError::storage(tmp.display(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| ServiceError::storage(path.display(), e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ServiceError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| ServiceError::storage(path.display(), e))?;
    serde_json::from_str(&text).map_err(|e| ServiceError::storage(path.display(), e))
}

#[cfg(test)]
mod tests {
    use hypograph_core::agents::EntryKind;

    use super::*;

    fn ev(seq: u64) -> SessionEvent {
        SessionEvent {
            session_id: "s".into(),
            seq,
            payload: EventPayload::Entry {
                entry: TranscriptEntry {
                    seq,
                    author: "planner".into(),
                    kind: EntryKind::Message,
                    content: format!("m{seq}"),
                    call_id: None,
                    tool_name: None,
                    timestamp_ms: 1,
                },
            },
        }
    }

    #[test]
    fn append_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(EVENTS_FILE);
        let (mut log, old) = EventLog::open(&path).unwrap();
        assert!(old.is_empty());
        log.append(&ev(0)).unwrap();
        log.append(&ev(1)).unwrap();
        assert!(log.append(&ev(1)).is_err());
        drop(log);
        let (log, old) = EventLog::open(&path).unwrap();
        assert_eq!(old, vec![ev(0), ev(1)]);
        assert_eq!(log.next_seq(), 2);
    }

    #[test]
    fn torn_tail_is_cut() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(EVENTS_FILE);
        let (mut log, _) = EventLog::open(&path).unwrap();
        log.append(&ev(0)).unwrap();
        drop(log);
        let intact = std::fs::metadata(&path).unwrap().len();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"session_id\":\"s\",\"se").unwrap();
        drop(f);
        let (mut log, old) = EventLog::open(&path).unwrap();
        assert_eq!(old.len(), 1);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), intact);
        log.append(&ev(1)).unwrap();
        drop(log);
        assert_eq!(EventLog::open(&path).unwrap().1.len(), 2);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(EVENTS_FILE);
        let good = serde_json::to_string(&ev(0)).unwrap();
        std::fs::write(&path, format!("garbage\n{good}\n")).unwrap();
        assert!(EventLog::open(&path).is_err());
    }

    #[test]
    fn event_wire_shape() {
        let v = serde_json::to_value(ev(3)).unwrap();
        assert_eq!(v["type"], "entry");
        assert_eq!(v["seq"], 3);
        assert_eq!(v["entry"]["author"], "planner");
        let s = SessionEvent {
            session_id: "s".into(),
            seq: 4,
            payload: EventPayload::Status {
                status: SessionStatus::AwaitingHuman,
                detail: None,
            },
        };
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["type"], "status");
        assert_eq!(v["status"], "awaiting_human");
        assert_eq!(serde_json::from_value::<SessionEvent>(v).unwrap(), s);
    }
}
