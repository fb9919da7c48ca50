//! Novelty and feasibility assessment of a proposal against the literature.

mod search;

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    ChatBackend, ChatMessage, ChatRequest, GatewayError, ToolParameter, ToolSchema,
};
use crate::prompts;
use crate::proposal::{render_proposal, ResearchProposal};

pub use search::{
    LiteratureSearch, PaperRecord, RateLimiter, SearchConfig, SearchError, SemanticScholarClient,
    StaticSearch,
};

pub const SEARCH_TOOL: &str = "search_literature";
pub const TERMINATE: &str = "TERMINATE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyReport {
    /// Distinct queries issued, in order.
    pub queries: Vec<String>,
    /// Records returned for each query; empty when the query failed.
    pub hits: Vec<Vec<PaperRecord>>,
    pub novelty: u8,
    pub feasibility: u8,
    pub rationale: String,
}

impl NoveltyReport {
    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "Novelty: Score: {}/10\nFeasibility: Score: {}/10\n\n{}\n",
            self.novelty, self.feasibility, self.rationale
        );
        if !self.queries.is_empty() {
            out.push_str("\nLiterature searches:\n");
            for (q, h) in self.queries.iter().zip(&self.hits) {
                out.push_str(&format!("- \"{q}\" ({} results)\n", h.len()));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("no `{0}` label found")]
    MissingLabel(&'static str),
    #[error("no n/10 score follows the `{0}` label")]
    MissingScore(&'static str),
    #[error("{label} score {value}/10 is outside 1..=10")]
    OutOfRange { label: &'static str, value: u64 },
}

static LABEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(novelty|feasibility)\b").unwrap());
static SCORE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\d+)\s*/\s*10\b").unwrap());

/// Integer `n/10` scores bound to the `Novelty` and `Feasibility` labels.
///
/// Each label occurrence owns the text up to the next label occurrence; the
/// first occurrence whose text holds an `n/10` token decides the score.
/// Decimal tokens such as `7.5/10` are not scores.
pub fn parse_scores(text: &str) -> Result<(u8, u8), ScoreError> {
    let labels: Vec<(usize, usize, bool)> = LABEL
        .captures_iter(text)
        .map(|c| {
            let m = c.get(0).unwrap();
            (
                m.start(),
                m.end(),
                m.as_str().eq_ignore_ascii_case("novelty"),
            )
        })
        .collect();

    let find = |want_novelty: bool, name: &'static str| -> Result<u8, ScoreError> {
        let mut seen = false;
        for (i, &(_, end, is_novelty)) in labels.iter().enumerate() {
            if is_novelty != want_novelty {
                continue;
            }
            seen = true;
            let stop = labels.get(i + 1).map(|l| l.0).unwrap_or(text.len());
            let window = &text[end..stop];
            for c in SCORE.captures_iter(window) {
                let m = c.get(1).unwrap();
                let before = window[..m.start()].chars().next_back();
                if matches!(before, Some(ch) if ch == '.' || ch == ',' || ch.is_ascii_digit()) {
                    continue;
                }
                let value: u64 = m.as_str().parse().unwrap_or(u64::MAX);
                return if (1..=10).contains(&value) {
                    Ok(value as u8)
                } else {
                    Err(ScoreError::OutOfRange { label: name, value })
                };
            }
        }
        Err(if seen {
            ScoreError::MissingScore(name)
        } else {
            ScoreError::MissingLabel(name)
        })
    };
    Ok((find(true, "novelty")?, find(false, "feasibility")?))
}

/// True when `TERMINATE` appears as a standalone, case-sensitive word.
pub fn contains_terminate(text: &str) -> bool {
    text.match_indices(TERMINATE).any(|(i, _)| {
        let before = text[..i].chars().next_back();
        let after = text[i + TERMINATE.len()..].chars().next();
        let word = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
        !word(before) && !word(after)
    })
}

/// Removes standalone `TERMINATE` tokens and trims.
pub fn strip_terminate(text: &str) -> String {
    static RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bTERMINATE\b").unwrap());
    RE.replace_all(text, "").trim().to_string()
}

#[derive(Debug, Error)]
pub enum NoveltyError {
    #[error(transparent)]
    Chat(#[from] GatewayError),
    #[error("could not parse scores ({reason}); final message: {final_message}")]
    Assessment {
        reason: ScoreError,
        final_message: String,
    },
    #[error("assessment did not conclude within {0} rounds")]
    RoundsExhausted(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssessOptions {
    pub model: String,
    pub temperature: f32,
    pub max_output_tokens: u32,
    pub max_queries: usize,
    pub hits_per_query: usize,
    pub max_rounds: usize,
}

impl Default for AssessOptions {
    fn default() -> Self {
        Self {
            model: String::new(),
            temperature: 0.0,
            max_output_tokens: 4096,
            max_queries: 3,
            hits_per_query: 10,
            max_rounds: 12,
        }
    }
}

pub fn search_tool_schema() -> ToolSchema {
    ToolSchema {
        name: SEARCH_TOOL.into(),
        description: "Search the scholarly literature and return the titles and abstracts of the most relevant papers."
            .into(),
        parameters: vec![ToolParameter {
            name: "query".into(),
            kind: "string".into(),
            description: "Keywords describing the research idea.".into(),
            required: true,
        }],
    }
}

fn format_hits(query: &str, hits: &[PaperRecord]) -> String {
    if hits.is_empty() {
        return format!("No papers found for \"{query}\".");
    }
    let mut out = format!("Top {} papers for \"{query}\":\n", hits.len());
    for (i, h) in hits.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, h.title));
        if let Some(a) = &h.abstract_text {
            out.push_str(&format!("   Abstract: {a}\n"));
        }
    }
    out
}

/// Query bookkeeping for one assessment: at most `max` distinct queries
/// (case-folded), no repeats of a query that already succeeded, and a
/// failed query may be retried.
struct QueryLedger {
    max: usize,
    keys: Vec<String>,
    queries: Vec<String>,
    hits: Vec<Vec<PaperRecord>>,
    succeeded: HashSet<String>,
}

impl QueryLedger {
    fn run(&mut self, query: &str, search: &dyn LiteratureSearch, limit: usize) -> String {
        let query = query.trim();
        if query.is_empty() {
            return "Error: parameter `query` must be a non-empty string.".into();
        }
        let key = query.to_lowercase();
        if self.succeeded.contains(&key) {
            return format!("Error: duplicate query rejected; \"{query}\" was already searched. Use a different combination of keywords.");
        }
        let pos = match self.keys.iter().position(|k| *k == key) {
            Some(p) => p,
            None if self.keys.len() >= self.max => {
                return format!(
                    "Error: search limit reached; at most {} distinct queries are allowed. Conclude the evaluation with the results gathered so far.",
                    self.max
                );
            }
            None => {
                self.keys.push(key.clone());
                self.queries.push(query.to_string());
                self.hits.push(Vec::new());
                self.keys.len() - 1
            }
        };
        match search.search(query, limit) {
            Ok(mut records) => {
                records.truncate(limit);
                let text = format_hits(query, &records);
                self.hits[pos] = records;
                self.succeeded.insert(key);
                text
            }
            Err(e) => format!("Error: search failed: {e}"),
        }
    }
}

/// Runs the novelty-assistant loop: the model may call the literature search
/// tool, then ends with a scored evaluation.
pub fn assess_novelty(
    proposal: &ResearchProposal,
    chat: &dyn ChatBackend,
    search: &dyn LiteratureSearch,
    opts: &AssessOptions,
) -> Result<NoveltyReport, NoveltyError> {
    assess_text(&render_proposal(proposal), chat, search, opts)
}

/// [`assess_novelty`] for free text, such as a bare hypothesis.
pub fn assess_text(
    proposal_text: &str,
    chat: &dyn ChatBackend,
    search: &dyn LiteratureSearch,
    opts: &AssessOptions,
) -> Result<NoveltyReport, NoveltyError> {
    let task = prompts::NOVELTY_TASK
        .render(&[("proposal", proposal_text)])
        .expect("novelty task placeholders");
    let mut messages = vec![
        ChatMessage::system(prompts::NOVELTY_ASSISTANT.plain()),
        ChatMessage::user(task),
    ];
    let mut ledger = QueryLedger {
        max: opts.max_queries,
        keys: Vec::new(),
        queries: Vec::new(),
        hits: Vec::new(),
        succeeded: HashSet::new(),
    };
    let mut reasked = false;

    for _ in 0..opts.max_rounds.max(1) {
        let mut req = ChatRequest::new(messages.clone());
        req.model = opts.model.clone();
        req.temperature = opts.temperature;
        req.max_output_tokens = opts.max_output_tokens;
        req.tools = vec![search_tool_schema()];
        let resp = chat.complete(&req)?;

        if !resp.tool_calls.is_empty() {
            let mut assistant = ChatMessage::assistant(resp.content.clone());
            assistant.tool_calls = resp.tool_calls.clone();
            messages.push(assistant);
            for call in &resp.tool_calls {
                let result = if call.name != SEARCH_TOOL {
                    format!(
                        "Error: unknown tool `{}`; the only tool is `{SEARCH_TOOL}`.",
                        call.name
                    )
                } else {
                    match call.arguments.get("query").and_then(|v| v.as_str()) {
                        Some(q) => ledger.run(q, search, opts.hits_per_query),
                        None => "Error: parameter `query` must be a non-empty string.".into(),
                    }
                };
                messages.push(ChatMessage::tool_result(call.id.clone(), result));
            }
            continue;
        }

        match parse_scores(&resp.content) {
            Ok((novelty, feasibility)) => {
                return Ok(NoveltyReport {
                    queries: ledger.queries,
                    hits: ledger.hits,
                    novelty,
                    feasibility,
                    rationale: strip_terminate(&resp.content),
                });
            }
            Err(reason) if reasked => {
                return Err(NoveltyError::Assessment {
                    reason,
                    final_message: resp.content,
                });
            }
            Err(reason) => {
                reasked = true;
                messages.push(ChatMessage::assistant(resp.content));
                messages.push(ChatMessage::user(
                    prompts::NOVELTY_REASK
                        .render(&[("problem", &reason.to_string())])
                        .expect("re-ask placeholders"),
                ));
            }
        }
    }
    Err(NoveltyError::RoundsExhausted(opts.max_rounds))
}
