use std::collections::{HashSet, VecDeque};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tools::ToolRegistry;
use super::transcript::{EntryKind, Observer, Transcript, TranscriptEntry, TranscriptError};
use super::{validate_roster, AgentError, AgentName, AgentProfile, AgentSettings, AgentsConfig};
use crate::gateway::{ChatBackend, ChatMessage, ChatRequest, GatewayError, Role, ToolCall};
use crate::novelty::{contains_terminate, strip_terminate};
use crate::prompts;
use crate::proposal::{normalize_key, parse_proposal, ResearchDocument, PROPOSAL_KEYS};

/// Speakers used, in order, when the manager's reply names no role.
pub const FALLBACK_ORDER: [AgentName; 6] = [
    AgentName::Planner,
    AgentName::Assistant,
    AgentName::Ontologist,
    AgentName::Scientist1,
    AgentName::Scientist2,
    AgentName::Critic,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupChatConfig {
    /// Upper bound on speaker turns.
    pub max_turns: usize,
    /// Transcript entries shown to the manager.
    pub manager_tail: usize,
    pub agents: AgentsConfig,
}

impl Default for GroupChatConfig {
    fn default() -> Self {
        Self {
            max_turns: 30,
            manager_tail: 40,
            agents: AgentsConfig::default(),
        }
    }
}

impl GroupChatConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_turns == 0 {
            return Err(AgentError::Config("max_turns must be >= 1".into()));
        }
        if self.manager_tail == 0 {
            return Err(AgentError::Config("manager_tail must be >= 1".into()));
        }
        self.agents.validate()
    }
}

#[derive(Debug, Error)]
pub enum GroupChatError {
    #[error(transparent)]
    Config(#[from] AgentError),
    #[error("speaker selection failed: {0}")]
    Manager(#[source] GatewayError),
    #[error("`{speaker}` turn failed: {source}")]
    Turn {
        speaker: AgentName,
        #[source]
        source: GatewayError,
    },
    #[error("transcript error: {0}")]
    Transcript(#[from] TranscriptError),
}

#[derive(Debug, Clone)]
pub struct GroupChatOutcome {
    pub transcript: Transcript,
    pub document: Option<ResearchDocument>,
    pub terminated: bool,
    pub turns: usize,
}

/// Human messages for a running chat.
pub trait InterventionSource {
    /// Messages to inject before the next speaker selection; `next_seq` is
    /// the sequence number the first of them will receive.
    fn drain(&mut self, next_seq: u64) -> Vec<String>;

    /// Called when the manager hands the turn to the human. `None` means no
    /// reply arrived.
    fn wait_for_human(&mut self, next_seq: u64) -> Option<String>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoInterventions;

impl InterventionSource for NoInterventions {
    fn drain(&mut self, _next_seq: u64) -> Vec<String> {
        Vec::new()
    }

    fn wait_for_human(&mut self, _next_seq: u64) -> Option<String> {
        None
    }
}

/// Interventions released once the transcript reaches a given length.
#[derive(Debug, Default, Clone)]
pub struct QueuedInterventions {
    queue: VecDeque<(u64, String)>,
}

impl QueuedInterventions {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queues `text` for injection once `next_seq >= at_seq`.
    pub fn at(mut self, at_seq: u64, text: impl Into<String>) -> Self {
        self.queue.push_back((at_seq, text.into()));
        self
    }
}

impl InterventionSource for QueuedInterventions {
    fn drain(&mut self, next_seq: u64) -> Vec<String> {
        let mut out = Vec::new();
        while self.queue.front().is_some_and(|(at, _)| *at <= next_seq) {
            out.push(self.queue.pop_front().expect("front exists").1);
        }
        out
    }

    fn wait_for_human(&mut self, _next_seq: u64) -> Option<String> {
        self.queue.pop_front().map(|(_, t)| t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub speaker: AgentName,
    /// Set when the reply named no role and the fallback was used.
    pub fallback_reason: Option<String>,
}

/// The roster name standing alone on some line of `reply`, compared
/// case-insensitively.
pub fn parse_speaker(reply: &str, roster: &[AgentProfile]) -> Option<AgentName> {
    reply.lines().map(str::trim).find_map(|line| {
        roster
            .iter()
            .map(|p| p.name)
            .find(|n| n.as_str().eq_ignore_ascii_case(line))
    })
}

fn fallback_after(prev: Option<AgentName>) -> AgentName {
    match prev.and_then(|p| FALLBACK_ORDER.iter().position(|&n| n == p)) {
        Some(i) => FALLBACK_ORDER[(i + 1) % FALLBACK_ORDER.len()],
        None => FALLBACK_ORDER[0],
    }
}

fn entry_line(e: &TranscriptEntry) -> Option<String> {
    let tool = e.tool_name.as_deref().unwrap_or("tool");
    match e.kind {
        EntryKind::Message | EntryKind::HumanIntervention => {
            Some(format!("{}: {}", e.author, e.content))
        }
        EntryKind::ToolCall => Some(format!("{} called {tool} with {}", e.author, e.content)),
        EntryKind::ToolResult => Some(format!("{tool} result: {}", e.content)),
        EntryKind::Warning | EntryKind::Termination => None,
    }
}

/// Asks the manager who speaks next. Unparsable replies select the roster
/// member after `previous` in [`FALLBACK_ORDER`].
pub fn select_next_speaker(
    transcript: &Transcript,
    roster: &[AgentProfile],
    chat: &dyn ChatBackend,
    manager: &AgentSettings,
    tail: usize,
    previous: Option<AgentName>,
) -> Result<Selection, GatewayError> {
    if roster.is_empty() {
        return Err(GatewayError::Argument("roster is empty".into()));
    }
    let roles = roster
        .iter()
        .map(|p| format!("- {}: {}", p.name, p.description))
        .collect::<Vec<_>>()
        .join("\n");
    let entries = transcript.entries();
    let conversation = entries[entries.len().saturating_sub(tail)..]
        .iter()
        .filter_map(entry_line)
        .collect::<Vec<_>>()
        .join("\n\n");
    let role_names = roster
        .iter()
        .map(|p| p.name.as_str())
        .collect::<Vec<_>>()
        .join(", ");
    let system = prompts::MANAGER_SYSTEM
        .render(&[("roles", &roles)])
        .expect("roles placeholder");
    let user = prompts::MANAGER_SELECT
        .render(&[("conversation", &conversation), ("role_names", &role_names)])
        .expect("manager placeholders");
    let req = ChatRequest {
        model: manager.model.clone(),
        temperature: 0.0,
        max_output_tokens: manager.max_output_tokens,
        ..ChatRequest::new(vec![ChatMessage::system(system), ChatMessage::user(user)])
    };
    let reply = chat.complete(&req)?.content;
    Ok(match parse_speaker(&reply, roster) {
        Some(speaker) => Selection {
            speaker,
            fallback_reason: None,
        },
        None => {
            let speaker = fallback_after(previous);
            Selection {
                speaker,
                fallback_reason: Some(format!(
                    "manager reply {:?} names no role; falling back to {speaker}",
                    reply.trim()
                )),
            }
        }
    })
}

/// The conversation as `viewer` sees it: its own messages as assistant
/// turns, everyone else's as named user turns. Structured tool messages are
/// kept only for the tool executor's own calls.
fn shared_view(transcript: &Transcript, viewer: &AgentProfile) -> Vec<ChatMessage> {
    let mut out = vec![ChatMessage::system(viewer.system_message.clone())];
    let me = viewer.name.as_str();
    for e in transcript.entries() {
        let own_tools = viewer.can_execute_tools && e.author == me;
        match e.kind {
            EntryKind::Message if e.author == me => {
                out.push(ChatMessage::assistant(e.content.clone()))
            }
            EntryKind::Message | EntryKind::HumanIntervention => {
                out.push(ChatMessage::user(e.content.clone()).named(e.author.clone()))
            }
            EntryKind::ToolCall if own_tools => {
                let call = ToolCall {
                    id: e.call_id.clone().unwrap_or_default(),
                    name: e.tool_name.clone().unwrap_or_default(),
                    arguments: serde_json::from_str(&e.content).unwrap_or_default(),
                };
                match out.last_mut() {
                    Some(m) if m.role == Role::Assistant && !m.tool_calls.is_empty() => {
                        m.tool_calls.push(call)
                    }
                    _ => {
                        let mut m = ChatMessage::assistant("");
                        m.tool_calls.push(call);
                        out.push(m);
                    }
                }
            }
            EntryKind::ToolResult
                if own_tools || is_own_result(transcript, e, me, viewer.can_execute_tools) =>
            {
                out.push(ChatMessage::tool_result(
                    e.call_id.clone().unwrap_or_default(),
                    e.content.clone(),
                ))
            }
            EntryKind::ToolCall | EntryKind::ToolResult => {
                if let Some(line) = entry_line(e) {
                    out.push(ChatMessage::user(line).named(e.author.clone()));
                }
            }
            EntryKind::Warning | EntryKind::Termination => {}
        }
    }
    out
}

/// True when `e` answers a structured call made by `me`.
fn is_own_result(transcript: &Transcript, e: &TranscriptEntry, me: &str, executor: bool) -> bool {
    executor
        && transcript
            .entries()
            .iter()
            .any(|c| c.kind == EntryKind::ToolCall && c.call_id == e.call_id && c.author == me)
}

struct Chat<'o> {
    transcript: Transcript,
    observer: &'o mut dyn Observer,
}

impl Chat<'_> {
    fn push(
        &mut self,
        author: &str,
        kind: EntryKind,
        content: &str,
    ) -> Result<(), TranscriptError> {
        let e = self.transcript.push(author, kind, content)?;
        self.observer.entry(e);
        Ok(())
    }

    fn push_tool(
        &mut self,
        author: &str,
        kind: EntryKind,
        content: &str,
        call_id: &str,
        tool: &str,
    ) -> Result<(), TranscriptError> {
        let e = self
            .transcript
            .push_tool(author, kind, content, call_id, tool)?;
        self.observer.entry(e);
        Ok(())
    }
}

/// Runs the manager-driven group chat on `task` until a message contains
/// `TERMINATE` or `cfg.max_turns` speaker turns have been taken.
pub fn run_group_chat(
    task: &str,
    roster: &[AgentProfile],
    tools: &mut ToolRegistry<'_>,
    chat: &dyn ChatBackend,
    cfg: &GroupChatConfig,
    interventions: &mut dyn InterventionSource,
    observer: &mut dyn Observer,
) -> Result<GroupChatOutcome, GroupChatError> {
    cfg.validate()?;
    validate_roster(roster)?;
    if task.trim().is_empty() {
        return Err(AgentError::Config("task is empty".into()).into());
    }
    let profile = |n: AgentName| {
        roster
            .iter()
            .find(|p| p.name == n)
            .expect("roster validated")
    };
    let mut st = Chat {
        transcript: Transcript::new(),
        observer,
    };
    st.push(AgentName::Human.as_str(), EntryKind::Message, task.trim())?;

    let mut previous: Option<AgentName> = None;
    let mut turns = 0;
    let mut terminated = false;
    let mut used_ids: HashSet<String> = HashSet::new();
    while turns < cfg.max_turns {
        for text in interventions.drain(st.transcript.next_seq()) {
            st.push(
                AgentName::Human.as_str(),
                EntryKind::HumanIntervention,
                &text,
            )?;
        }
        let sel = select_next_speaker(
            &st.transcript,
            roster,
            chat,
            &cfg.agents.manager,
            cfg.manager_tail,
            previous,
        )
        .map_err(GroupChatError::Manager)?;
        if let Some(reason) = &sel.fallback_reason {
            tracing::warn!("{reason}");
            st.push("manager", EntryKind::Warning, reason)?;
        }
        let mut speaker = sel.speaker;

        if speaker == AgentName::Human {
            st.observer.awaiting_human(true);
            let reply = interventions.wait_for_human(st.transcript.next_seq());
            st.observer.awaiting_human(false);
            match reply {
                Some(text) => {
                    st.push(
                        AgentName::Human.as_str(),
                        EntryKind::HumanIntervention,
                        &text,
                    )?;
                    previous = Some(AgentName::Human);
                    turns += 1;
                    continue;
                }
                None => {
                    speaker = fallback_after(previous);
                    st.push(
                        "manager",
                        EntryKind::Warning,
                        &format!("no human reply; continuing with {speaker}"),
                    )?;
                }
            }
        }

        let p = profile(speaker);
        let req = ChatRequest {
            model: p.settings.model.clone(),
            temperature: p.settings.temperature,
            max_output_tokens: p.settings.max_output_tokens,
            tools: if p.can_execute_tools {
                tools.schemas()
            } else {
                Vec::new()
            },
            ..ChatRequest::new(shared_view(&st.transcript, p))
        };
        let resp = chat
            .complete(&req)
            .map_err(|source| GroupChatError::Turn { speaker, source })?;
        let name = speaker.as_str();
        let content = resp.content.trim();
        if !content.is_empty() {
            st.push(name, EntryKind::Message, content)?;
        } else if resp.tool_calls.is_empty() {
            st.push(
                "manager",
                EntryKind::Warning,
                &format!("{speaker} returned an empty reply"),
            )?;
        }

        let calls: Vec<(String, &ToolCall)> = resp
            .tool_calls
            .iter()
            .map(|c| {
                let mut id = c.id.trim().to_string();
                if id.is_empty() || used_ids.contains(&id) {
                    id = format!("call_{}_{}", st.transcript.next_seq(), used_ids.len());
                }
                used_ids.insert(id.clone());
                (id, c)
            })
            .collect();
        for (id, c) in &calls {
            let args = serde_json::Value::Object(c.arguments.clone()).to_string();
            st.push_tool(name, EntryKind::ToolCall, &args, id, &c.name)?;
        }
        for (id, c) in &calls {
            let (author, text) = if p.can_execute_tools {
                let text = tools.invoke(&c.name, &c.arguments).unwrap_or_else(|e| e);
                (AgentName::Assistant.as_str(), text)
            } else {
                (
                    name,
                    format!(
                        "Error: `{speaker}` cannot execute tools; ask the assistant to call `{}`.",
                        c.name
                    ),
                )
            };
            st.push_tool(author, EntryKind::ToolResult, &text, id, &c.name)?;
        }

        previous = Some(speaker);
        turns += 1;
        if contains_terminate(content) {
            st.push(name, EntryKind::Termination, "")?;
            terminated = true;
            break;
        }
    }

    let document = build_group_chat_document(&st.transcript, tools);
    Ok(GroupChatOutcome {
        transcript: st.transcript,
        document,
        terminated,
        turns,
    })
}

fn last_message<'t>(t: &'t Transcript, who: AgentName) -> impl Iterator<Item = String> + 't {
    t.entries()
        .iter()
        .rev()
        .filter(move |e| e.kind == EntryKind::Message && e.author == who.as_str())
        .map(|e| strip_terminate(&e.content))
        .filter(|c| !c.is_empty())
}

/// The proposal key named by an `### Expanded ...` style heading line.
fn heading_key(line: &str) -> Option<&'static str> {
    let t = line.trim();
    let body = t
        .strip_prefix('#')?
        .trim_start_matches('#')
        .trim()
        .trim_end_matches(':');
    let lower = body.to_lowercase();
    let rest = lower.strip_prefix("expanded")?.trim();
    let key = normalize_key(rest);
    PROPOSAL_KEYS.iter().copied().find(|k| *k == key)
}

/// Splits scientist_2 text on `### Expanded {Field}` headings. Text without
/// such headings is kept whole under `hypothesis`.
fn split_expansions(text: &str) -> IndexMap<String, String> {
    let mut sections: Vec<(&'static str, Vec<&str>)> = Vec::new();
    for line in text.lines() {
        match heading_key(line) {
            Some(k) => sections.push((k, vec![line])),
            None => {
                if let Some((_, body)) = sections.last_mut() {
                    body.push(line);
                }
            }
        }
    }
    let mut out = IndexMap::new();
    if sections.is_empty() {
        out.insert("hypothesis".to_string(), text.trim().to_string());
        return out;
    }
    for (k, lines) in sections {
        let body = lines.join("\n").trim().to_string();
        out.entry(k.to_string())
            .and_modify(|v: &mut String| {
                v.push_str("\n\n");
                v.push_str(&body);
            })
            .or_insert(body);
    }
    out.sort_by_cached_key(|k, _| PROPOSAL_KEYS.iter().position(|p| p == k));
    out
}

fn section_start(lines: &[&str], from: usize, needles: &[&str]) -> Option<usize> {
    let is_heading = |l: &str| {
        let t = l.trim_start();
        t.starts_with('#')
            || t.starts_with('*')
            || t.starts_with('(')
            || t.starts_with(|c: char| c.is_ascii_digit())
    };
    let hit = |l: &str| {
        let low = l.to_lowercase();
        needles.iter().any(|n| low.contains(n))
    };
    (from..lines.len())
        .find(|&i| is_heading(lines[i]) && hit(lines[i]))
        .or_else(|| (from..lines.len()).find(|&i| hit(lines[i])))
}

/// Splits the critic's reply into review, modeling and synthetic-biology
/// parts. Missing parts are noted rather than invented.
fn split_critique(text: &str) -> (String, String, String) {
    let lines: Vec<&str> = text.lines().collect();
    let join = |a: usize, b: usize| lines[a..b].join("\n").trim().to_string();
    let modeling = section_start(
        &lines,
        1,
        &["molecular modeling", "modeling and simulation"],
    );
    let synbio = section_start(
        &lines,
        modeling.map_or(1, |m| m + 1),
        &["synthetic biology"],
    );
    match (modeling, synbio) {
        (Some(m), Some(s)) if m > 0 && s > m => (join(0, m), join(m, s), join(s, lines.len())),
        _ => (
            text.trim().to_string(),
            "Not separately identified in the critic's review.".to_string(),
            "Not separately identified in the critic's review.".to_string(),
        ),
    }
}

/// Assembles a document from the chat when a path, definitions, a parsable
/// proposal, an expansion and a critique are all present.
pub fn build_group_chat_document(
    t: &Transcript,
    tools: &ToolRegistry<'_>,
) -> Option<ResearchDocument> {
    let path = tools.last_path()?;
    let definitions = last_message(t, AgentName::Ontologist).next()?;
    let proposal = last_message(t, AgentName::Scientist1).find_map(|m| parse_proposal(&m).ok())?;
    let expansions = split_expansions(&last_message(t, AgentName::Scientist2).next()?);
    let (critique, modeling, synbio) = split_critique(&last_message(t, AgentName::Critic).next()?);
    let doc = ResearchDocument {
        start_node: path.labels.first()?.clone(),
        end_node: path.labels.last()?.clone(),
        path_string: path.path_string.clone(),
        expanded_graph: definitions,
        proposal,
        expansions,
        critique,
        modeling_priorities: modeling,
        synbio_priorities: synbio,
        novelty_report: tools.last_report().cloned(),
    };
    doc.validate().ok()?;
    Some(doc)
}
