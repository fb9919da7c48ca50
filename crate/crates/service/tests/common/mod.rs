#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use hypograph_core::gateway::{
    ChatBackend, ChatRequest, ChatResponse, GatewayError, HashingEmbedder, ScriptedBackend,
};
use hypograph_core::graph::{load_graph_file, GraphMlOptions};
use hypograph_core::novelty::{LiteratureSearch, StaticSearch};
use hypograph_service::backends::canned_replies;
use hypograph_service::{
    AppConfig, BackendFactory, GraphData, ServiceError, SessionManager, SessionSpec,
};

pub const WAIT: Duration = Duration::from_secs(20);

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn tiny_graph() -> Arc<GraphData> {
    let g = load_graph_file(&fixture("tiny5.graphml"), &GraphMlOptions::default()).unwrap();
    Arc::new(GraphData::embed(g, Arc::new(HashingEmbedder::new(64))).unwrap())
}

pub fn offline_config() -> AppConfig {
    let mut cfg = AppConfig {
        offline: true,
        ..AppConfig::default()
    };
    cfg.group_chat.human_timeout_secs = 5;
    cfg
}

pub fn manager_with(dir: &Path, factory: Arc<dyn BackendFactory>) -> SessionManager {
    SessionManager::new(offline_config(), dir, Some(tiny_graph()), factory).unwrap()
}

/// Scripted backend that answers `allowed` requests, then blocks until
/// more are allowed.
pub struct Gate {
    inner: ScriptedBackend,
    state: Mutex<GateState>,
    cv: Condvar,
}

#[derive(Default)]
struct GateState {
    served: usize,
    allowed: usize,
    blocked: bool,
}

impl Gate {
    pub fn new(replies: Vec<ChatResponse>, allowed: usize) -> Self {
        Self {
            inner: ScriptedBackend::new(replies),
            state: Mutex::new(GateState {
                allowed,
                ..GateState::default()
            }),
            cv: Condvar::new(),
        }
    }

    pub fn release(&self, n: usize) {
        self.state.lock().unwrap().allowed += n;
        self.cv.notify_all();
    }

    /// Waits until a request is held at the gate after `served` answers.
    pub fn wait_blocked(&self, served: usize) {
        let st = self.state.lock().unwrap();
        let (st, t) = self
            .cv
            .wait_timeout_while(st, WAIT, |s| !(s.blocked && s.served == served))
            .unwrap();
        assert!(
            !t.timed_out(),
            "gate never blocked after {served} answers (served {})",
            st.served
        );
    }

    pub fn served(&self) -> usize {
        self.state.lock().unwrap().served
    }
}

impl ChatBackend for Gate {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let mut st = self.state.lock().unwrap();
        while st.served >= st.allowed {
            st.blocked = true;
            self.cv.notify_all();
            st = self.cv.wait(st).unwrap();
        }
        st.blocked = false;
        st.served += 1;
        drop(st);
        self.inner.complete(req)
    }
}

/// Hands out one shared [`Gate`] over the offline canned replies.
pub struct GateFactory {
    pub gate: Mutex<Option<Arc<Gate>>>,
    allowed: usize,
}

impl GateFactory {
    pub fn new(allowed: usize) -> Arc<Self> {
        Arc::new(Self {
            gate: Mutex::new(None),
            allowed,
        })
    }

    pub fn gate(&self) -> Arc<Gate> {
        for _ in 0..2000 {
            if let Some(g) = self.gate.lock().unwrap().clone() {
                return g;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        panic!("no session asked for a backend");
    }
}

impl BackendFactory for GateFactory {
    fn chat(
        &self,
        spec: &SessionSpec,
        already_served: usize,
    ) -> Result<Arc<dyn ChatBackend>, ServiceError> {
        let replies = canned_replies(spec)
            .into_iter()
            .skip(already_served)
            .collect();
        let gate = Arc::new(Gate::new(replies, self.allowed));
        *self.gate.lock().unwrap() = Some(gate.clone());
        Ok(gate)
    }

    fn search(&self, _spec: &SessionSpec) -> Option<Arc<dyn LiteratureSearch>> {
        Some(Arc::new(StaticSearch::new()))
    }
}

/// Factory serving a fixed reply list.
pub struct ScriptFactory(pub Vec<ChatResponse>);

impl BackendFactory for ScriptFactory {
    fn chat(
        &self,
        _spec: &SessionSpec,
        already_served: usize,
    ) -> Result<Arc<dyn ChatBackend>, ServiceError> {
        Ok(Arc::new(ScriptedBackend::new(
            self.0.iter().skip(already_served).cloned(),
        )))
    }

    fn search(&self, _spec: &SessionSpec) -> Option<Arc<dyn LiteratureSearch>> {
        Some(Arc::new(StaticSearch::new()))
    }
}
