use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::transcript::{EntryKind, Observer, Transcript, TranscriptError};
use super::{AgentError, AgentName, AgentSettings, AgentsConfig, Engine};
use crate::gateway::{ChatBackend, ChatMessage, ChatRequest, GatewayError};
use crate::graph::{nearest_node, random_node_pair, EmbeddingError, GraphError};
use crate::novelty::{assess_novelty, AssessOptions, LiteratureSearch, NoveltyError};
use crate::path::{find_path, PathConfig, PathError, PathSample};
use crate::prompts;
use crate::proposal::{
    build_field_expansion_prompt, parse_proposal, ProposalError, ResearchDocument,
    ResearchProposal, PROPOSAL_KEYS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStep {
    Keywords,
    Path,
    Ontologist,
    Proposal,
    Expansion,
    Critique,
    Modeling,
    Synbio,
    Novelty,
    Assembly,
}

impl fmt::Display for PipelineStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("step serializes");
        f.write_str(s.as_str().expect("unit variant"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("cannot resolve keyword `{keyword}`: {source}")]
    Keyword {
        keyword: String,
        #[source]
        source: EmbeddingError,
    },
    #[error("cannot pick random keywords: {0}")]
    RandomPair(#[source] GraphError),
    #[error("path step failed: {0}")]
    Path(#[source] PathError),
    #[error("{step} step failed{}: {source}", field.as_ref().map(|f| format!(" for `{f}`")).unwrap_or_default())]
    Backend {
        step: PipelineStep,
        field: Option<String>,
        #[source]
        source: GatewayError,
    },
    #[error("proposal unparsable after repair: {source}")]
    Proposal {
        #[source]
        source: ProposalError,
        raw: String,
    },
    #[error("novelty step failed: {0}")]
    Novelty(#[source] NoveltyError),
    #[error("{step} step failed: {source}")]
    Document {
        step: PipelineStep,
        #[source]
        source: ProposalError,
    },
    #[error("transcript error: {0}")]
    Transcript(#[from] TranscriptError),
}

impl PipelineError {
    pub fn step(&self) -> PipelineStep {
        match self {
            PipelineError::Config(_)
            | PipelineError::Keyword { .. }
            | PipelineError::RandomPair(_) => PipelineStep::Keywords,
            PipelineError::Path(_) => PipelineStep::Path,
            PipelineError::Backend { step, .. } | PipelineError::Document { step, .. } => *step,
            PipelineError::Proposal { .. } => PipelineStep::Proposal,
            PipelineError::Novelty(_) => PipelineStep::Novelty,
            PipelineError::Transcript(_) => PipelineStep::Assembly,
        }
    }
}

impl From<AgentError> for PipelineError {
    fn from(e: AgentError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub path: PathConfig,
    pub agents: AgentsConfig,
    /// Rate the hypothesis after the priorities step when a search backend is
    /// available.
    pub novelty: bool,
    pub assess: AssessOptions,
    /// Run the seven expansions concurrently. Results are merged in key order.
    pub parallel_expansions: bool,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.path
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.agents.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub document: ResearchDocument,
    pub transcript: Transcript,
    pub path: PathSample,
}

struct Recorder<'o> {
    transcript: Transcript,
    observer: &'o mut dyn Observer,
}

impl Recorder<'_> {
    fn push(
        &mut self,
        author: AgentName,
        kind: EntryKind,
        content: &str,
    ) -> Result<(), PipelineError> {
        let e = self.transcript.push(author.as_str(), kind, content)?;
        self.observer.entry(e);
        Ok(())
    }

    fn push_tool(
        &mut self,
        kind: EntryKind,
        content: &str,
        call_id: &str,
        tool: &str,
    ) -> Result<(), PipelineError> {
        let e = self.transcript.push_tool(
            AgentName::Assistant.as_str(),
            kind,
            content,
            call_id,
            tool,
        )?;
        self.observer.entry(e);
        Ok(())
    }
}

fn request(system: &str, user: String, s: &AgentSettings) -> ChatRequest {
    ChatRequest {
        model: s.model.clone(),
        temperature: s.temperature,
        max_output_tokens: s.max_output_tokens,
        ..ChatRequest::new(vec![ChatMessage::system(system), ChatMessage::user(user)])
    }
}

fn call(
    chat: &dyn ChatBackend,
    req: &ChatRequest,
    step: PipelineStep,
    field: Option<&str>,
) -> Result<String, PipelineError> {
    chat.complete(req)
        .map(|r| r.content.trim().to_string())
        .map_err(|source| PipelineError::Backend {
            step,
            field: field.map(str::to_string),
            source,
        })
}

fn resolve_keywords(
    e: &Engine<'_>,
    k1: Option<&str>,
    k2: Option<&str>,
    seed: u64,
) -> Result<(String, String), PipelineError> {
    let resolve = |k: &str| {
        nearest_node(e.graph, e.store, k, e.embedder)
            .map(|(id, _)| id)
            .map_err(|source| PipelineError::Keyword {
                keyword: k.to_string(),
                source,
            })
    };
    fn given(k: Option<&str>) -> Option<&str> {
        k.map(str::trim).filter(|k| !k.is_empty())
    }
    match (given(k1), given(k2)) {
        (Some(a), Some(b)) => Ok((resolve(a)?, resolve(b)?)),
        (None, None) => random_node_pair(e.graph, seed).map_err(PipelineError::RandomPair),
        (Some(a), None) => {
            let a = resolve(a)?;
            let b = partner(e, &a, seed)?;
            Ok((a, b))
        }
        (None, Some(b)) => {
            let b = resolve(b)?;
            let a = partner(e, &b, seed)?;
            Ok((a, b))
        }
    }
}

/// A seeded random node distinct from `fixed`.
fn partner(e: &Engine<'_>, fixed: &str, seed: u64) -> Result<String, PipelineError> {
    let (a, b) = random_node_pair(e.graph, seed).map_err(PipelineError::RandomPair)?;
    Ok(if a == fixed { b } else { a })
}

/// Runs the fixed agent sequence: path, definitions, proposal, per-field
/// expansions, critique, modeling and synthetic-biology priorities and,
/// when enabled, novelty. Each step sees only its own inputs.
#[allow(clippy::too_many_arguments)]
pub fn run_scripted_pipeline(
    engine: Engine<'_>,
    chat: &dyn ChatBackend,
    search: Option<&dyn LiteratureSearch>,
    keyword_1: Option<&str>,
    keyword_2: Option<&str>,
    cfg: &PipelineConfig,
    observer: &mut dyn Observer,
) -> Result<PipelineOutcome, PipelineError> {
    cfg.validate()?;
    let g = engine.graph;
    let mut rec = Recorder {
        transcript: Transcript::new(),
        observer,
    };
    let settings = |n: AgentName| cfg.agents.settings_for(n);

    let (source, target) = resolve_keywords(&engine, keyword_1, keyword_2, cfg.path.seed)?;
    let mut args = Map::new();
    args.insert("keyword_1".into(), Value::String(source.clone()));
    args.insert("keyword_2".into(), Value::String(target.clone()));
    rec.push_tool(
        EntryKind::ToolCall,
        &Value::Object(args).to_string(),
        "path",
        super::GENERATE_PATH,
    )?;
    let sample =
        find_path(g, engine.store, &source, &target, &cfg.path).map_err(PipelineError::Path)?;
    let path_string = sample.path_string.clone();
    rec.push_tool(
        EntryKind::ToolResult,
        &path_string,
        "path",
        super::GENERATE_PATH,
    )?;

    let user = prompts::PIPELINE_ONTOLOGIST
        .render(&[("path_string", &path_string)])
        .expect("ontologist placeholders");
    let req = request(
        prompts::PIPELINE_ONTOLOGIST_SYSTEM.plain(),
        user,
        settings(AgentName::Ontologist),
    );
    let definitions = call(chat, &req, PipelineStep::Ontologist, None)?;
    rec.push(AgentName::Ontologist, EntryKind::Message, &definitions)?;

    let proposal = proposal_step(
        chat,
        &path_string,
        &definitions,
        settings(AgentName::Scientist1),
        &mut rec,
    )?;

    let expansions = expansion_step(
        chat,
        &proposal,
        settings(AgentName::Scientist2),
        cfg.parallel_expansions,
    )?;
    for text in expansions.values() {
        rec.push(AgentName::Scientist2, EntryKind::Message, text)?;
    }

    let start_label = g
        .label(g.require(&source).map_err(PipelineError::RandomPair)?)
        .to_string();
    let end_label = g
        .label(g.require(&target).map_err(PipelineError::RandomPair)?)
        .to_string();
    let mut document = ResearchDocument {
        start_node: start_label,
        end_node: end_label,
        path_string,
        expanded_graph: definitions,
        proposal,
        expansions,
        critique: String::new(),
        modeling_priorities: String::new(),
        synbio_priorities: String::new(),
        novelty_report: None,
    };
    let draft = document.draft();
    let critic = settings(AgentName::Critic);
    let review = |template: &prompts::Template, step| {
        let user = template
            .render(&[("draft", &draft)])
            .expect("draft placeholder");
        call(
            chat,
            &request(prompts::PIPELINE_CRITIC_SYSTEM.plain(), user, critic),
            step,
            None,
        )
    };
    document.critique = review(&prompts::PIPELINE_CRITIQUE, PipelineStep::Critique)?;
    rec.push(AgentName::Critic, EntryKind::Message, &document.critique)?;
    document.modeling_priorities = review(&prompts::PIPELINE_MODELING, PipelineStep::Modeling)?;
    rec.push(
        AgentName::Critic,
        EntryKind::Message,
        &document.modeling_priorities,
    )?;
    document.synbio_priorities = review(&prompts::PIPELINE_SYNBIO, PipelineStep::Synbio)?;
    rec.push(
        AgentName::Critic,
        EntryKind::Message,
        &document.synbio_priorities,
    )?;

    if let (true, Some(search)) = (cfg.novelty, search) {
        let mut args = Map::new();
        args.insert(
            "hypothesis".into(),
            Value::String(document.proposal.hypothesis().to_string()),
        );
        rec.push_tool(
            EntryKind::ToolCall,
            &Value::Object(args).to_string(),
            "novelty",
            super::RATE_NOVELTY,
        )?;
        let report = assess_novelty(&document.proposal, chat, search, &cfg.assess)
            .map_err(PipelineError::Novelty)?;
        rec.push_tool(
            EntryKind::ToolResult,
            &report.to_markdown(),
            "novelty",
            super::RATE_NOVELTY,
        )?;
        document.novelty_report = Some(report);
    }

    document
        .validate()
        .map_err(|source| PipelineError::Document {
            step: PipelineStep::Assembly,
            source,
        })?;
    rec.push(
        AgentName::Assistant,
        EntryKind::Termination,
        "pipeline complete",
    )?;
    Ok(PipelineOutcome {
        document,
        transcript: rec.transcript,
        path: sample,
    })
}

fn proposal_step(
    chat: &dyn ChatBackend,
    path_string: &str,
    definitions: &str,
    s: &AgentSettings,
    rec: &mut Recorder<'_>,
) -> Result<ResearchProposal, PipelineError> {
    let user = prompts::PIPELINE_PROPOSAL
        .render(&[("path_string", path_string), ("definitions", definitions)])
        .expect("proposal placeholders");
    let mut req = request(prompts::PIPELINE_SCIENTIST_SYSTEM.plain(), user, s);
    let raw = call(chat, &req, PipelineStep::Proposal, None)?;
    rec.push(AgentName::Scientist1, EntryKind::Message, &raw)?;
    let problem = match parse_proposal(&raw) {
        Ok(p) => return Ok(p),
        Err(e) => e.to_string(),
    };
    req.messages.push(ChatMessage::assistant(raw));
    req.messages.push(ChatMessage::user(
        prompts::JSON_REPAIR
            .render(&[("problem", &problem)])
            .expect("repair placeholder"),
    ));
    let raw = call(chat, &req, PipelineStep::Proposal, None)?;
    rec.push(AgentName::Scientist1, EntryKind::Message, &raw)?;
    parse_proposal(&raw).map_err(|source| PipelineError::Proposal { source, raw })
}

fn expansion_step(
    chat: &dyn ChatBackend,
    proposal: &ResearchProposal,
    s: &AgentSettings,
    parallel: bool,
) -> Result<IndexMap<String, String>, PipelineError> {
    let system = prompts::SCIENTIST_2.plain();
    let requests: Vec<(&str, ChatRequest)> = PROPOSAL_KEYS
        .iter()
        .map(|&k| {
            let content = proposal.get(k).unwrap_or_default();
            let user = build_field_expansion_prompt(k, content).map_err(|source| {
                PipelineError::Document {
                    step: PipelineStep::Expansion,
                    source,
                }
            })?;
            Ok((k, request(system, user, s)))
        })
        .collect::<Result<_, PipelineError>>()?;
    let run = |(k, req): &(&str, ChatRequest)| call(chat, req, PipelineStep::Expansion, Some(k));
    let results: Vec<Result<String, PipelineError>> = if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = requests
                .iter()
                .map(|r| scope.spawn(move || run(r)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("expansion thread panicked"))
                .collect()
        })
    } else {
        requests.iter().map(run).collect()
    };
    requests
        .iter()
        .zip(results)
        .map(|((k, _), r)| r.map(|text| (k.to_string(), text)))
        .collect()
}
