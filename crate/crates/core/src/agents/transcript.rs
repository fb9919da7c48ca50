use std::collections::HashMap;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Message,
    ToolCall,
    ToolResult,
    HumanIntervention,
    Termination,
    /// Orchestrator notice, such as a speaker-selection fallback.
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub author: String,
    pub kind: EntryKind,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_name: Option<String>,
    pub timestamp_ms: u64,
}

impl TranscriptEntry {
    /// Equality ignoring the timestamp.
    pub fn same_as(&self, other: &TranscriptEntry) -> bool {
        self.seq == other.seq
            && self.author == other.author
            && self.kind == other.kind
            && self.content == other.content
            && self.call_id == other.call_id
            && self.tool_name == other.tool_name
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranscriptError {
    #[error("entry {index} has sequence number {found}, expected {expected}")]
    Sequence {
        index: usize,
        expected: u64,
        found: u64,
    },
    #[error("tool call `{call_id}` by `{author}` has no result before its author speaks again")]
    UnpairedCall { call_id: String, author: String },
    #[error("tool result `{call_id}` does not answer an open tool call")]
    OrphanResult { call_id: String },
    #[error("{0} entry lacks a call id")]
    MissingCallId(&'static str),
    #[error("termination entry at {0} is not the last entry")]
    TerminationNotLast(u64),
    #[error("transcript is terminated; cannot append")]
    Closed,
}

/// Receives transcript entries as they are appended.
pub trait Observer {
    fn entry(&mut self, entry: &TranscriptEntry);

    /// The chat is waiting for (or stopped waiting for) a human reply.
    fn awaiting_human(&mut self, _waiting: bool) {}
}

impl<F: FnMut(&TranscriptEntry)> Observer for F {
    fn entry(&mut self, entry: &TranscriptEntry) {
        self(entry)
    }
}

/// Append-only conversation record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    /// Wraps existing entries after checking the invariants.
    pub fn from_entries(entries: Vec<TranscriptEntry>) -> Result<Self, TranscriptError> {
        let t = Self { entries };
        t.validate()?;
        Ok(t)
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn next_seq(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn is_terminated(&self) -> bool {
        self.entries
            .last()
            .is_some_and(|e| e.kind == EntryKind::Termination)
    }

    pub fn push(
        &mut self,
        author: &str,
        kind: EntryKind,
        content: impl Into<String>,
    ) -> Result<&TranscriptEntry, TranscriptError> {
        self.push_entry(author, kind, content.into(), None, None)
    }

    pub fn push_tool(
        &mut self,
        author: &str,
        kind: EntryKind,
        content: impl Into<String>,
        call_id: &str,
        tool_name: &str,
    ) -> Result<&TranscriptEntry, TranscriptError> {
        self.push_entry(
            author,
            kind,
            content.into(),
            Some(call_id.to_string()),
            Some(tool_name.to_string()),
        )
    }

    fn push_entry(
        &mut self,
        author: &str,
        kind: EntryKind,
        content: String,
        call_id: Option<String>,
        tool_name: Option<String>,
    ) -> Result<&TranscriptEntry, TranscriptError> {
        if self.is_terminated() {
            return Err(TranscriptError::Closed);
        }
        self.entries.push(TranscriptEntry {
            seq: self.next_seq(),
            author: author.to_string(),
            kind,
            content,
            call_id,
            tool_name,
            timestamp_ms: now_ms(),
        });
        Ok(self.entries.last().expect("just pushed"))
    }

    /// Checks the gapless sequence, tool-call pairing and single trailing
    /// termination.
    pub fn validate(&self) -> Result<(), TranscriptError> {
        let mut open: HashMap<String, String> = HashMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.seq != i as u64 {
                return Err(TranscriptError::Sequence {
                    index: i,
                    expected: i as u64,
                    found: e.seq,
                });
            }
            match e.kind {
                EntryKind::ToolCall => {
                    let id = e
                        .call_id
                        .clone()
                        .ok_or(TranscriptError::MissingCallId("tool_call"))?;
                    open.insert(id, e.author.clone());
                }
                EntryKind::ToolResult => {
                    let id = e
                        .call_id
                        .as_ref()
                        .ok_or(TranscriptError::MissingCallId("tool_result"))?;
                    if open.remove(id).is_none() {
                        return Err(TranscriptError::OrphanResult {
                            call_id: id.clone(),
                        });
                    }
                }
                EntryKind::Message | EntryKind::HumanIntervention => {
                    if let Some((id, _)) = open.iter().find(|(_, a)| **a == e.author) {
                        return Err(TranscriptError::UnpairedCall {
                            call_id: id.clone(),
                            author: e.author.clone(),
                        });
                    }
                }
                EntryKind::Termination => {
                    if i + 1 != self.entries.len() {
                        return Err(TranscriptError::TerminationNotLast(e.seq));
                    }
                }
                EntryKind::Warning => {}
            }
        }
        if let Some((id, author)) = open.into_iter().next() {
            return Err(TranscriptError::UnpairedCall {
                call_id: id,
                author,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairing_and_termination() {
        let mut t = Transcript::new();
        t.push("human", EntryKind::Message, "task").unwrap();
        t.push_tool(
            "assistant",
            EntryKind::ToolCall,
            "{}",
            "c1",
            "generate_path",
        )
        .unwrap();
        t.push_tool(
            "assistant",
            EntryKind::ToolResult,
            "silk",
            "c1",
            "generate_path",
        )
        .unwrap();
        t.push("assistant", EntryKind::Message, "done TERMINATE")
            .unwrap();
        t.push("assistant", EntryKind::Termination, "").unwrap();
        t.validate().unwrap();
        assert!(matches!(
            t.push("critic", EntryKind::Message, "late"),
            Err(TranscriptError::Closed)
        ));
    }

    #[test]
    fn violations_detected() {
        let mut t = Transcript::new();
        t.push_tool(
            "assistant",
            EntryKind::ToolCall,
            "{}",
            "c1",
            "generate_path",
        )
        .unwrap();
        t.push("assistant", EntryKind::Message, "oops").unwrap();
        assert!(matches!(
            t.validate(),
            Err(TranscriptError::UnpairedCall { .. })
        ));

        let mut t = Transcript::new();
        t.push_tool(
            "assistant",
            EntryKind::ToolResult,
            "x",
            "c9",
            "generate_path",
        )
        .unwrap();
        assert!(matches!(
            t.validate(),
            Err(TranscriptError::OrphanResult { .. })
        ));

        let mut t = Transcript::new();
        t.push("human", EntryKind::Message, "a").unwrap();
        t.push("human", EntryKind::Message, "b").unwrap();
        t.entries[1].seq = 5;
        assert!(matches!(
            t.validate(),
            Err(TranscriptError::Sequence { .. })
        ));
    }
}
