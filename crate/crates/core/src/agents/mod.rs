//! Agent roster, transcript, tools and the two orchestration modes.

mod group_chat;
mod pipeline;
mod tools;
mod transcript;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::EmbeddingBackend;
use crate::graph::{EmbeddingStore, KnowledgeGraph};
use crate::prompts;

pub use group_chat::{
    build_group_chat_document, parse_speaker, run_group_chat, select_next_speaker, GroupChatConfig,
    GroupChatError, GroupChatOutcome, InterventionSource, NoInterventions, QueuedInterventions,
    Selection, FALLBACK_ORDER,
};
pub use pipeline::{
    run_scripted_pipeline, PipelineConfig, PipelineError, PipelineOutcome, PipelineStep,
};
pub use tools::{ToolRegistry, GENERATE_PATH, RATE_NOVELTY};
pub use transcript::{EntryKind, Observer, Transcript, TranscriptEntry, TranscriptError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentName {
    Human,
    Planner,
    Assistant,
    Ontologist,
    #[serde(rename = "scientist_1")]
    Scientist1,
    #[serde(rename = "scientist_2")]
    Scientist2,
    Critic,
}

impl AgentName {
    pub const ALL: [AgentName; 7] = [
        AgentName::Human,
        AgentName::Planner,
        AgentName::Assistant,
        AgentName::Ontologist,
        AgentName::Scientist1,
        AgentName::Scientist2,
        AgentName::Critic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentName::Human => "human",
            AgentName::Planner => "planner",
            AgentName::Assistant => "assistant",
            AgentName::Ontologist => "ontologist",
            AgentName::Scientist1 => "scientist_1",
            AgentName::Scientist2 => "scientist_2",
            AgentName::Critic => "critic",
        }
    }

    /// One-line role summary shown to the manager.
    pub fn description(self) -> &'static str {
        match self {
            AgentName::Human => "The human user who poses the task and may give feedback.",
            AgentName::Planner => "Develops a step-by-step plan to solve the task.",
            AgentName::Assistant => {
                "Calls the tools: generate_path for a knowledge path and rate_novelty_feasibility for novelty and feasibility."
            }
            AgentName::Ontologist => "Defines each term of the knowledge path and discusses the relationships between them.",
            AgentName::Scientist1 => "Writes the research proposal with seven keys in JSON format.",
            AgentName::Scientist2 => "Expands each aspect of the research proposal with quantitative detail.",
            AgentName::Critic => "Summarizes and critically reviews the proposal and suggests improvements.",
        }
    }
}

impl fmt::Display for AgentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentName {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, AgentError> {
        AgentName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| AgentError::Roster(format!("unknown agent `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextPolicy {
    /// The agent sees only the inputs of its step.
    Filtered,
    /// The agent sees the whole transcript.
    SharedMemory,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid roster: {0}")]
    Roster(String),
    #[error("invalid agent configuration: {0}")]
    Config(String),
}

/// Model settings for one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentSettings {
    /// Empty means the backend default.
    pub model: String,
    pub temperature: f32,
    pub max_output_tokens: u32,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self {
            model: String::new(),
            temperature: 0.7,
            max_output_tokens: 4096,
        }
    }
}

impl AgentSettings {
    pub fn validate(&self) -> Result<(), AgentError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(AgentError::Config(format!(
                "temperature must be in [0, 2], got {}",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(AgentError::Config(
                "max_output_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-agent model settings with a shared default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentsConfig {
    pub default: AgentSettings,
    /// Used for speaker selection.
    pub manager: AgentSettings,
    pub overrides: BTreeMap<AgentName, AgentSettings>,
}

impl Default for AgentsConfig {
    fn default() -> Self {
        Self {
            default: AgentSettings::default(),
            manager: AgentSettings {
                temperature: 0.0,
                max_output_tokens: 64,
                ..AgentSettings::default()
            },
            overrides: BTreeMap::new(),
        }
    }
}

impl AgentsConfig {
    pub fn settings_for(&self, name: AgentName) -> &AgentSettings {
        self.overrides.get(&name).unwrap_or(&self.default)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        self.default.validate()?;
        self.manager.validate()?;
        for s in self.overrides.values() {
            s.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub name: AgentName,
    pub system_message: String,
    pub can_execute_tools: bool,
    pub context_policy: ContextPolicy,
    pub description: String,
    pub settings: AgentSettings,
}

impl AgentProfile {
    pub fn new(name: AgentName, settings: AgentSettings) -> Self {
        let system_message = match name {
            AgentName::Human => "",
            AgentName::Planner => prompts::PLANNER.plain(),
            AgentName::Assistant => prompts::ASSISTANT.plain(),
            AgentName::Ontologist => prompts::ONTOLOGIST.plain(),
            AgentName::Scientist1 => prompts::SCIENTIST_1.plain(),
            AgentName::Scientist2 => prompts::SCIENTIST_2.plain(),
            AgentName::Critic => prompts::CRITIC.plain(),
        };
        Self {
            name,
            system_message: system_message.to_string(),
            can_execute_tools: name == AgentName::Assistant,
            context_policy: ContextPolicy::SharedMemory,
            description: name.description().to_string(),
            settings,
        }
    }
}

/// The seven-member group-chat roster with catalog system messages.
pub fn default_roster(cfg: &AgentsConfig) -> Vec<AgentProfile> {
    AgentName::ALL
        .into_iter()
        .map(|n| AgentProfile::new(n, cfg.settings_for(n).clone()))
        .collect()
}

/// Checks that every role appears exactly once and only the assistant runs
/// tools.
pub fn validate_roster(roster: &[AgentProfile]) -> Result<(), AgentError> {
    for name in AgentName::ALL {
        let n = roster.iter().filter(|p| p.name == name).count();
        if n != 1 {
            return Err(AgentError::Roster(format!(
                "`{name}` appears {n} times, expected once"
            )));
        }
    }
    if let Some(p) = roster
        .iter()
        .find(|p| p.can_execute_tools != (p.name == AgentName::Assistant))
    {
        return Err(AgentError::Roster(format!(
            "only the assistant may execute tools (`{}` has can_execute_tools={})",
            p.name, p.can_execute_tools
        )));
    }
    for p in roster {
        p.settings.validate()?;
    }
    Ok(())
}

/// Shared, read-only inputs of a run.
#[derive(Clone, Copy)]
pub struct Engine<'a> {
    pub graph: &'a KnowledgeGraph,
    pub store: &'a EmbeddingStore,
    pub embedder: &'a dyn EmbeddingBackend,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for n in AgentName::ALL {
            assert_eq!(n.as_str().parse::<AgentName>().unwrap(), n);
            assert_eq!(serde_json::to_value(n).unwrap(), n.as_str());
        }
        assert!("Scientist_1".parse::<AgentName>().is_err());
    }

    #[test]
    fn default_roster_is_valid() {
        let roster = default_roster(&AgentsConfig::default());
        validate_roster(&roster).unwrap();
        let tools: Vec<_> = roster
            .iter()
            .filter(|p| p.can_execute_tools)
            .map(|p| p.name)
            .collect();
        assert_eq!(tools, vec![AgentName::Assistant]);
        assert!(roster[4].system_message.starts_with("scientist 1."));
    }

    #[test]
    fn roster_violations() {
        let mut roster = default_roster(&AgentsConfig::default());
        roster[1].can_execute_tools = true;
        assert!(validate_roster(&roster).is_err());
        let mut roster = default_roster(&AgentsConfig::default());
        roster.pop();
        assert!(validate_roster(&roster).is_err());
    }
}
