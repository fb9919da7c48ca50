use serde_json::{Map, Value};

use super::Engine;
use crate::gateway::{ChatBackend, ToolParameter, ToolSchema};
use crate::graph::nearest_node;
use crate::novelty::{assess_text, AssessOptions, LiteratureSearch, NoveltyReport};
use crate::path::{find_path, PathConfig, PathSample};

pub const GENERATE_PATH: &str = "generate_path";
pub const RATE_NOVELTY: &str = "rate_novelty_feasibility";

struct NoveltyTool<'a> {
    chat: &'a dyn ChatBackend,
    search: &'a dyn LiteratureSearch,
    opts: AssessOptions,
}

/// Tools the assistant may call. Failures come back as error text so the
/// conversation can continue.
pub struct ToolRegistry<'a> {
    engine: Engine<'a>,
    path_cfg: PathConfig,
    novelty: Option<NoveltyTool<'a>>,
    last_path: Option<PathSample>,
    last_report: Option<NoveltyReport>,
}

fn string_arg<'v>(args: &'v Map<String, Value>, name: &str) -> Result<&'v str, String> {
    match args.get(name) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim()),
        Some(Value::String(_)) => Err(format!(
            "Error: parameter `{name}` must be a non-empty string."
        )),
        Some(_) => Err(format!("Error: parameter `{name}` must be a string.")),
        None => Err(format!("Error: missing required parameter `{name}`.")),
    }
}

impl<'a> ToolRegistry<'a> {
    pub fn new(engine: Engine<'a>, path_cfg: PathConfig) -> Self {
        Self {
            engine,
            path_cfg,
            novelty: None,
            last_path: None,
            last_report: None,
        }
    }

    /// Enables `rate_novelty_feasibility`.
    pub fn with_novelty(
        mut self,
        chat: &'a dyn ChatBackend,
        search: &'a dyn LiteratureSearch,
        opts: AssessOptions,
    ) -> Self {
        self.novelty = Some(NoveltyTool { chat, search, opts });
        self
    }

    pub fn schemas(&self) -> Vec<ToolSchema> {
        let param = |name: &str, description: &str| ToolParameter {
            name: name.into(),
            kind: "string".into(),
            description: description.into(),
            required: true,
        };
        let mut out = vec![ToolSchema {
            name: GENERATE_PATH.into(),
            description:
                "Generate a knowledge path between two keywords using the knowledge graph.".into(),
            parameters: vec![
                param(
                    "keyword_1",
                    "First keyword; the path starts at the closest node.",
                ),
                param(
                    "keyword_2",
                    "Second keyword; the path ends at the closest node.",
                ),
            ],
        }];
        if self.novelty.is_some() {
            out.push(ToolSchema {
                name: RATE_NOVELTY.into(),
                description: "Rate the novelty and feasibility of a research hypothesis against the literature."
                    .into(),
                parameters: vec![param("hypothesis", "The research hypothesis to assess.")],
            });
        }
        out
    }

    pub fn last_path(&self) -> Option<&PathSample> {
        self.last_path.as_ref()
    }

    pub fn last_report(&self) -> Option<&NoveltyReport> {
        self.last_report.as_ref()
    }

    /// Runs a tool. `Err` carries the error text for the tool result.
    pub fn invoke(&mut self, name: &str, args: &Map<String, Value>) -> Result<String, String> {
        match name {
            GENERATE_PATH => {
                let k1 = string_arg(args, "keyword_1")?;
                let k2 = string_arg(args, "keyword_2")?;
                let e = self.engine;
                let resolve = |k: &str| {
                    nearest_node(e.graph, e.store, k, e.embedder)
                        .map(|(id, _)| id)
                        .map_err(|err| format!("Error: cannot resolve keyword `{k}`: {err}"))
                };
                let (a, b) = (resolve(k1)?, resolve(k2)?);
                let sample = find_path(e.graph, e.store, &a, &b, &self.path_cfg)
                    .map_err(|err| format!("Error: {err}"))?;
                let text = sample.path_string.clone();
                self.last_path = Some(sample);
                Ok(text)
            }
            RATE_NOVELTY if self.novelty.is_some() => {
                let hypothesis = string_arg(args, "hypothesis")?;
                let tool = self.novelty.as_ref().expect("checked");
                let report =
                    assess_text(hypothesis, tool.chat, tool.search, &tool.opts).map_err(|err| {
                        format!("Error: novelty assessment failed: {err}. Please re-call the tool.")
                    })?;
                let text = report.to_markdown();
                self.last_report = Some(report);
                Ok(text)
            }
            other => Err(format!("Error: unknown tool `{other}`.")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::HashingEmbedder;
    use crate::graph::{ensure_embeddings, fixtures, EmbeddingCache};

    fn args(pairs: &[(&str, &str)]) -> Map<String, Value> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), Value::String(v.to_string())))
            .collect()
    }

    #[test]
    fn validation_names_parameter() {
        let g = fixtures::graph(&[("a", "silk"), ("b", "energy")], &[("a", "b", "uses")]);
        let emb = HashingEmbedder::new(16);
        let store = ensure_embeddings(&g, &emb, &EmbeddingCache::in_memory()).unwrap();
        let mut reg = ToolRegistry::new(
            Engine {
                graph: &g,
                store: &store,
                embedder: &emb,
            },
            PathConfig::default(),
        );
        let err = reg
            .invoke(
                GENERATE_PATH,
                &args(&[("keyword_1", "silk"), ("keyword_2", " ")]),
            )
            .unwrap_err();
        assert!(err.contains("keyword_2"));
        let err = reg.invoke("launch", &Map::new()).unwrap_err();
        assert!(err.contains("unknown tool"));
        let err = reg
            .invoke(RATE_NOVELTY, &args(&[("hypothesis", "x")]))
            .unwrap_err();
        assert!(err.contains("unknown tool"));
        let ok = reg
            .invoke(
                GENERATE_PATH,
                &args(&[("keyword_1", "silk"), ("keyword_2", "energy")]),
            )
            .unwrap();
        assert_eq!(ok, "silk --> uses --> energy");
        assert_eq!(reg.last_path().unwrap().nodes, vec!["a", "b"]);
    }
}
