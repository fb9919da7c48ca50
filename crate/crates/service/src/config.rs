//! TOML configuration file.

use std::path::{Path, PathBuf};

use hypograph_core::agents::{AgentsConfig, GroupChatConfig, PipelineConfig};
use hypograph_core::gateway::BackendConfig;
use hypograph_core::graph::GraphMlOptions;
use hypograph_core::novelty::{AssessOptions, SearchConfig};
use hypograph_core::path::PathConfig;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphSection {
    /// GraphML file; relative paths resolve against the config file.
    pub path: Option<PathBuf>,
    pub label_key: String,
    pub relation_key: String,
}

impl Default for GraphSection {
    fn default() -> Self {
        let d = GraphMlOptions::default();
        Self {
            path: None,
            label_key: d.label_key,
            relation_key: d.relation_key,
        }
    }
}

impl GraphSection {
    pub fn options(&self) -> GraphMlOptions {
        GraphMlOptions {
            label_key: self.label_key.clone(),
            relation_key: self.relation_key.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSection {
    #[serde(flatten)]
    pub backend: BackendConfig,
    pub batch_size: usize,
    /// Dimension of the offline hashing embedder.
    pub offline_dimension: usize,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            backend: BackendConfig {
                model: "text-embedding-3-small".into(),
                ..BackendConfig::default()
            },
            batch_size: 64,
            offline_dimension: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSection {
    #[serde(flatten)]
    pub client: SearchConfig,
    pub enabled: bool,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            client: SearchConfig::default(),
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSection {
    pub novelty: bool,
    pub parallel_expansions: bool,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            novelty: true,
            parallel_expansions: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupChatSection {
    pub max_turns: usize,
    pub manager_tail: usize,
    /// How long the chat waits when the manager selects the human.
    pub human_timeout_secs: u64,
}

impl Default for GroupChatSection {
    fn default() -> Self {
        let d = GroupChatConfig::default();
        Self {
            max_turns: d.max_turns,
            manager_tail: d.manager_tail,
            human_timeout_secs: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerSection {
    pub bind: String,
    /// Session directories live here.
    pub data_dir: PathBuf,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("sessions"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportSection {
    /// Markdown-to-PDF command; `{input}` and `{output}` are substituted.
    pub pdf_command: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    /// Use the hashing embedder, canned model replies and no literature
    /// search.
    pub offline: bool,
    pub graph: GraphSection,
    pub chat: BackendConfig,
    pub embedding: EmbeddingSection,
    pub search: SearchSection,
    pub path: PathConfig,
    pub agents: AgentsConfig,
    pub novelty: AssessOptions,
    pub pipeline: PipelineSection,
    pub group_chat: GroupChatSection,
    pub server: ServerSection,
    pub export: ExportSection,
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        toml::from_str(text).map_err(|e| ServiceError::Validation(format!("config: {e}")))
    }

    /// Reads `path`, resolving relative paths inside it against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ServiceError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(g) = cfg.graph.path.as_mut().filter(|p| p.is_relative()) {
            *g = base.join(&*g);
        }
        if cfg.server.data_dir.is_relative() {
            cfg.server.data_dir = base.join(&cfg.server.data_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        self.path
            .validate()
            .map_err(|e| ServiceError::Validation(e.to_string()))?;
        self.agents
            .validate()
            .map_err(|e| ServiceError::Validation(e.to_string()))?;
        if !self.offline {
            self.chat
                .validate()
                .map_err(|e| ServiceError::Validation(format!("chat: {e}")))?;
            self.embedding
                .backend
                .validate()
                .map_err(|e| ServiceError::Validation(format!("embedding: {e}")))?;
        }
        if self.embedding.batch_size == 0 {
            return Err(ServiceError::Validation(
                "embedding.batch_size must be positive".into(),
            ));
        }
        if self.group_chat.max_turns == 0 {
            return Err(ServiceError::Validation(
                "group_chat.max_turns must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn pipeline_config(&self, path: PathConfig) -> PipelineConfig {
        PipelineConfig {
            path,
            agents: self.agents.clone(),
            novelty: self.pipeline.novelty,
            assess: self.novelty.clone(),
            parallel_expansions: self.pipeline.parallel_expansions,
        }
    }

    pub fn group_chat_config(&self, max_turns: Option<usize>) -> GroupChatConfig {
        GroupChatConfig {
            max_turns: max_turns.unwrap_or(self.group_chat.max_turns),
            manager_tail: self.group_chat.manager_tail,
            agents: self.agents.clone(),
        }
    }
}
