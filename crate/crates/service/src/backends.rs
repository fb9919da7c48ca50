//! Chat and literature-search backends handed to each session.

use std::path::Path;
use std::sync::Arc;

use hypograph_core::gateway::{
    BackendConfig, ChatBackend, ChatResponse, HttpChatBackend, ReplayBackend, ScriptedBackend,
    TraceEvent, TraceRecord,
};
use hypograph_core::novelty::{LiteratureSearch, SemanticScholarClient, StaticSearch};
use hypograph_core::testkit;

use crate::config::AppConfig;
use crate::error::ServiceError;
use crate::events::{load_trace, SessionMode, SessionSpec};

/// Produces the backends of one session run.
pub trait BackendFactory: Send + Sync {
    /// Chat backend for `spec`. `already_served` responses were answered
    /// before a restart and are replayed from the session trace; a
    /// sequential backend should skip that many.
    fn chat(
        &self,
        spec: &SessionSpec,
        already_served: usize,
    ) -> Result<Arc<dyn ChatBackend>, ServiceError>;

    /// Literature search used by the novelty step; `None` disables it.
    fn search(&self, spec: &SessionSpec) -> Option<Arc<dyn LiteratureSearch>>;
}

/// Canned replies for a session in offline mode.
pub fn canned_replies(spec: &SessionSpec) -> Vec<ChatResponse> {
    match spec.mode {
        SessionMode::Scripted => {
            let mut out = testkit::pipeline_replies();
            if spec.novelty {
                out.push(ChatResponse::text(testkit::NOVELTY_VERDICT));
            }
            out
        }
        SessionMode::GroupChat => testkit::group_chat_replies(
            spec.keyword_1.as_deref().unwrap_or("silk"),
            spec.keyword_2.as_deref().unwrap_or("energy-intensive"),
            spec.novelty,
        ),
    }
}

/// Deterministic backends with no network access: canned model replies
/// and an empty literature index.
#[derive(Debug, Default, Clone, Copy)]
pub struct OfflineFactory;

impl BackendFactory for OfflineFactory {
    fn chat(
        &self,
        spec: &SessionSpec,
        already_served: usize,
    ) -> Result<Arc<dyn ChatBackend>, ServiceError> {
        Ok(Arc::new(ScriptedBackend::new(
            canned_replies(spec).into_iter().skip(already_served),
        )))
    }

    fn search(&self, _spec: &SessionSpec) -> Option<Arc<dyn LiteratureSearch>> {
        Some(Arc::new(StaticSearch::new()))
    }
}

/// OpenAI-compatible chat over HTTP and the scholarly search API. The
/// search client, and with it the rate limiter, is shared by all sessions.
pub struct LiveFactory {
    chat: BackendConfig,
    search: Option<Arc<SemanticScholarClient>>,
}

impl LiveFactory {
    pub fn new(cfg: &AppConfig) -> Result<Self, ServiceError> {
        cfg.chat.validate()?;
        let search = if cfg.search.enabled {
            Some(Arc::new(
                SemanticScholarClient::new(cfg.search.client.clone())
                    .map_err(|e| ServiceError::Validation(format!("search: {e}")))?,
            ))
        } else {
            None
        };
        Ok(Self {
            chat: cfg.chat.clone(),
            search,
        })
    }
}

impl BackendFactory for LiveFactory {
    fn chat(
        &self,
        _spec: &SessionSpec,
        _already_served: usize,
    ) -> Result<Arc<dyn ChatBackend>, ServiceError> {
        Ok(Arc::new(HttpChatBackend::new(self.chat.clone())?))
    }

    fn search(&self, _spec: &SessionSpec) -> Option<Arc<dyn LiteratureSearch>> {
        self.search.clone().map(|s| s as Arc<dyn LiteratureSearch>)
    }
}

/// Serves the responses of a recorded trace in order. Searches return no
/// hits, since only model traffic is recorded.
pub struct ReplayFactory {
    records: Vec<TraceRecord>,
}

impl ReplayFactory {
    pub fn from_file(path: &Path) -> Result<Self, ServiceError> {
        if !path.exists() {
            return Err(ServiceError::Validation(format!(
                "replay trace {} does not exist",
                path.display()
            )));
        }
        Ok(Self {
            records: load_trace(path)?,
        })
    }
}

impl BackendFactory for ReplayFactory {
    fn chat(
        &self,
        _spec: &SessionSpec,
        already_served: usize,
    ) -> Result<Arc<dyn ChatBackend>, ServiceError> {
        let start = match already_served {
            0 => 0,
            n => self
                .records
                .iter()
                .enumerate()
                .filter(|(_, r)| matches!(r.event, TraceEvent::Response { .. }))
                .nth(n - 1)
                .map_or(self.records.len(), |(i, _)| i + 1),
        };
        Ok(Arc::new(ReplayBackend::from_records(
            &self.records[start..],
        )))
    }

    fn search(&self, _spec: &SessionSpec) -> Option<Arc<dyn LiteratureSearch>> {
        Some(Arc::new(StaticSearch::new()))
    }
}

/// Factory selected by the configuration: replay when a trace is given,
/// offline when configured, otherwise live.
pub fn factory_for(
    cfg: &AppConfig,
    replay: Option<&Path>,
) -> Result<Arc<dyn BackendFactory>, ServiceError> {
    if let Some(p) = replay {
        return Ok(Arc::new(ReplayFactory::from_file(p)?));
    }
    if cfg.offline {
        Ok(Arc::new(OfflineFactory))
    } else {
        Ok(Arc::new(LiveFactory::new(cfg)?))
    }
}

#[cfg(test)]
mod tests {
    use hypograph_core::gateway::{ChatMessage, ChatRequest};
    use hypograph_core::path::PathConfig;

    use super::*;

    fn spec(mode: SessionMode, novelty: bool) -> SessionSpec {
        SessionSpec {
            mode,
            keyword_1: Some("silk".into()),
            keyword_2: Some("fiber".into()),
            task: None,
            path: PathConfig::default(),
            novelty,
            max_turns: 30,
            parallel_expansions: false,
        }
    }

    fn req() -> ChatRequest {
        ChatRequest::new(vec![ChatMessage::user("hi")])
    }

    #[test]
    fn offline_reply_counts() {
        assert_eq!(
            canned_replies(&spec(SessionMode::Scripted, false)).len(),
            12
        );
        assert_eq!(canned_replies(&spec(SessionMode::Scripted, true)).len(), 13);
        let chat = OfflineFactory
            .chat(&spec(SessionMode::Scripted, false), 11)
            .unwrap();
        assert_eq!(chat.complete(&req()).unwrap().content, testkit::SYNBIO);
        assert!(chat.complete(&req()).is_err());
    }

    #[test]
    fn replay_skips_served_pairs() {
        let rec = |seq, event| TraceRecord { seq, event };
        let records = vec![
            rec(0, TraceEvent::Request { request: req() }),
            rec(
                1,
                TraceEvent::Response {
                    response: ChatResponse::text("a"),
                },
            ),
            rec(2, TraceEvent::Request { request: req() }),
            rec(
                3,
                TraceEvent::Response {
                    response: ChatResponse::text("b"),
                },
            ),
        ];
        let f = ReplayFactory { records };
        let s = spec(SessionMode::Scripted, false);
        assert_eq!(
            f.chat(&s, 0).unwrap().complete(&req()).unwrap().content,
            "a"
        );
        assert_eq!(
            f.chat(&s, 1).unwrap().complete(&req()).unwrap().content,
            "b"
        );
        assert!(f.chat(&s, 2).unwrap().complete(&req()).is_err());
    }
}
