//! Session lifecycle: creation, background runs, persistence, human
//! messages and crash recovery.

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

use hypograph_core::agents::{
    default_roster, run_group_chat, run_scripted_pipeline, EntryKind, InterventionSource, Observer,
    ToolRegistry, TranscriptEntry,
};
use hypograph_core::gateway::{
    ChatBackend, ResumeBackend, TraceEvent, TraceLog, TraceRecord, TracedChat,
};
use hypograph_core::graph::random_node_pair;
use hypograph_core::novelty::LiteratureSearch;
use hypograph_core::path::PathConfig;
use hypograph_core::prompts;
use hypograph_core::proposal::{export_document, ExportOptions, ResearchDocument};
use serde::Serialize;
use tokio::sync::broadcast;

use crate::backends::BackendFactory;
use crate::config::AppConfig;
use crate::error::ServiceError;
use crate::events::{
    load_trace, now_ms, read_json, write_json_atomic, EventLog, EventPayload, SessionEvent,
    SessionIndex, SessionMode, SessionRequest, SessionSpec, SessionStatus, DOCUMENT_FILE,
    EVENTS_FILE, INDEX_FILE, TRACE_FILE,
};
use crate::runtime::GraphData;

const CHANNEL_CAPACITY: usize = 1024;

/// Group-chat task built from the two keywords.
pub fn keyword_task(keyword_1: &str, keyword_2: &str) -> String {
    format!(
        "Develop a research proposal that connects the concepts \"{keyword_1}\" and \"{keyword_2}\". \
         In the end, you must use the rate_novelty_feasibility function to rate the novelty and feasibility of the research idea."
    )
}

/// Applies `req` to the configured defaults and checks the result.
pub fn resolve_spec(
    cfg: &AppConfig,
    graph: &GraphData,
    req: &SessionRequest,
) -> Result<SessionSpec, ServiceError> {
    let o = &req.cfg;
    let path = PathConfig {
        alpha: o.alpha.unwrap_or(cfg.path.alpha),
        k_waypoints: o.waypoints.unwrap_or(cfg.path.k_waypoints),
        hops: o.hops.unwrap_or(cfg.path.hops),
        seed: o.seed.unwrap_or(cfg.path.seed),
        mode: o.path_mode.unwrap_or(cfg.path.mode),
        leg_mode: cfg.path.leg_mode,
    };
    path.validate()
        .map_err(|e| ServiceError::Validation(e.to_string()))?;
    let max_turns = o.max_turns.unwrap_or(cfg.group_chat.max_turns);
    if max_turns == 0 {
        return Err(ServiceError::Validation("max_turns must be >= 1".into()));
    }
    let clean = |k: &Option<String>| {
        k.as_deref()
            .map(str::trim)
            .filter(|k| !k.is_empty())
            .map(String::from)
    };
    let (mut keyword_1, mut keyword_2) = (clean(&req.keyword_1), clean(&req.keyword_2));
    let mut task = req
        .task
        .as_deref()
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(String::from);
    if req.mode == SessionMode::Scripted && task.is_some() {
        return Err(ServiceError::Validation(
            "task applies to group_chat sessions only".into(),
        ));
    }
    if req.mode == SessionMode::GroupChat {
        let chosen_by_user = keyword_1.is_some() && keyword_2.is_some();
        if !chosen_by_user {
            let (a, b) = random_node_pair(&graph.graph, path.seed)?;
            let label = |id: &str| {
                graph
                    .graph
                    .label(graph.graph.require(id).expect("drawn from graph"))
                    .to_string()
            };
            let (la, lb) = (label(&a), label(&b));
            match (&keyword_1, &keyword_2) {
                (None, None) => (keyword_1, keyword_2) = (Some(la), Some(lb)),
                (Some(k), None) => keyword_2 = Some(if *k == la { lb } else { la }),
                (None, Some(k)) => keyword_1 = Some(if *k == la { lb } else { la }),
                _ => {}
            }
        }
        if task.is_none() {
            task = Some(if chosen_by_user {
                keyword_task(
                    keyword_1.as_deref().unwrap_or_default(),
                    keyword_2.as_deref().unwrap_or_default(),
                )
            } else {
                prompts::DEFAULT_TASK.plain().to_string()
            });
        }
    }
    Ok(SessionSpec {
        mode: req.mode,
        keyword_1,
        keyword_2,
        task,
        path,
        novelty: o.novelty.unwrap_or(cfg.pipeline.novelty),
        max_turns,
        parallel_expansions: o
            .parallel_expansions
            .unwrap_or(cfg.pipeline.parallel_expansions),
    })
}

/// Multi-producer queue of human messages drained by the session run.
#[derive(Default)]
struct HumanQueue {
    state: Mutex<(VecDeque<String>, bool)>,
    ready: Condvar,
}

impl HumanQueue {
    fn push(&self, text: String) -> Result<usize, ServiceError> {
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        if st.1 {
            return Err(ServiceError::State(
                "session no longer accepts messages".into(),
            ));
        }
        st.0.push_back(text);
        self.ready.notify_all();
        Ok(st.0.len())
    }

    fn drain(&self) -> Vec<String> {
        self.state
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .0
            .drain(..)
            .collect()
    }

    fn wait(&self, timeout: Duration) -> Option<String> {
        let deadline = Instant::now() + timeout;
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            if let Some(t) = st.0.pop_front() {
                return Some(t);
            }
            let now = Instant::now();
            if st.1 || now >= deadline {
                return None;
            }
            st = self
                .ready
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    fn close(&self) {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).1 = true;
        self.ready.notify_all();
    }

    fn pending(&self) -> usize {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).0.len()
    }
}

struct State {
    index: SessionIndex,
    events: Vec<SessionEvent>,
    transcript: Vec<TranscriptEntry>,
    document: Option<ResearchDocument>,
    log: EventLog,
}

/// One session: its persisted record, in-memory event history and live
/// channel.
pub struct SessionHandle {
    id: String,
    dir: PathBuf,
    state: Mutex<State>,
    changed: Condvar,
    tx: broadcast::Sender<SessionEvent>,
    human: HumanQueue,
}

/// Snapshot returned by the API.
#[derive(Debug, Clone, Serialize)]
pub struct SessionView {
    pub id: String,
    pub mode: SessionMode,
    pub status: SessionStatus,
    pub spec: SessionSpec,
    pub created_ms: u64,
    pub updated_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub event_count: usize,
    pub pending_human_messages: usize,
    pub transcript: Vec<TranscriptEntry>,
    pub document: Option<ResearchDocument>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionSummary {
    pub id: String,
    pub mode: SessionMode,
    pub status: SessionStatus,
    pub created_ms: u64,
    pub keyword_1: Option<String>,
    pub keyword_2: Option<String>,
}

impl SessionHandle {
    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn spec(&self) -> SessionSpec {
        self.lock().index.spec.clone()
    }

    pub fn status(&self) -> SessionStatus {
        self.lock().index.status
    }

    pub fn document(&self) -> Option<ResearchDocument> {
        self.lock().document.clone()
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.lock().transcript.clone()
    }

    pub fn events(&self) -> Vec<SessionEvent> {
        self.lock().events.clone()
    }

    pub fn view(&self) -> SessionView {
        let st = self.lock();
        SessionView {
            id: self.id.clone(),
            mode: st.index.spec.mode,
            status: st.index.status,
            spec: st.index.spec.clone(),
            created_ms: st.index.created_ms,
            updated_ms: st.index.updated_ms,
            error: st.index.error.clone(),
            event_count: st.events.len(),
            pending_human_messages: self.human.pending(),
            transcript: st.transcript.clone(),
            document: st.document.clone(),
        }
    }

    pub fn summary(&self) -> SessionSummary {
        let st = self.lock();
        SessionSummary {
            id: self.id.clone(),
            mode: st.index.spec.mode,
            status: st.index.status,
            created_ms: st.index.created_ms,
            keyword_1: st.index.spec.keyword_1.clone(),
            keyword_2: st.index.spec.keyword_2.clone(),
        }
    }

    /// Persisted events with `seq >= from`, plus a receiver for later ones
    /// unless the session has ended. No event falls between the two.
    pub fn subscribe(
        &self,
        from: u64,
    ) -> (Vec<SessionEvent>, Option<broadcast::Receiver<SessionEvent>>) {
        let st = self.lock();
        let past = st
            .events
            .iter()
            .filter(|e| e.seq >= from)
            .cloned()
            .collect();
        let rx = (!st.index.status.is_terminal()).then(|| self.tx.subscribe());
        (past, rx)
    }

    /// Blocks until the session ends or `timeout` passes; returns the
    /// status at that point.
    pub fn wait_terminal(&self, timeout: Duration) -> SessionStatus {
        self.wait_until(timeout, |st| st.index.status.is_terminal())
    }

    /// Blocks until the session has `n` events or ends.
    pub fn wait_events(&self, n: usize, timeout: Duration) -> usize {
        let deadline = Instant::now() + timeout;
        let mut st = self.lock();
        while st.events.len() < n && !st.index.status.is_terminal() {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            st = self
                .changed
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        st.events.len()
    }

    /// Blocks until the status equals `status` or the session ends.
    pub fn wait_status(&self, status: SessionStatus, timeout: Duration) -> SessionStatus {
        self.wait_until(timeout, |st| {
            st.index.status == status || st.index.status.is_terminal()
        })
    }

    fn wait_until(&self, timeout: Duration, done: impl Fn(&State) -> bool) -> SessionStatus {
        let deadline = Instant::now() + timeout;
        let mut st = self.lock();
        while !done(&st) {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            st = self
                .changed
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        st.index.status
    }

    fn publish(&self, st: &mut State, payload: EventPayload) -> Result<(), ServiceError> {
        let event = SessionEvent {
            session_id: self.id.clone(),
            seq: st.log.next_seq(),
            payload,
        };
        st.log.append(&event)?;
        if let Some(e) = event.entry() {
            st.transcript.push(e.clone());
        }
        st.events.push(event.clone());
        let _ = self.tx.send(event);
        self.changed.notify_all();
        Ok(())
    }

    fn publish_entry(&self, entry: &TranscriptEntry) -> Result<(), ServiceError> {
        let mut st = self.lock();
        self.publish(
            &mut st,
            EventPayload::Entry {
                entry: entry.clone(),
            },
        )
    }

    /// Records a status change; repeated statuses are not re-recorded.
    fn set_status(
        &self,
        status: SessionStatus,
        detail: Option<String>,
    ) -> Result<(), ServiceError> {
        let mut st = self.lock();
        if st.index.status == status || st.index.status.is_terminal() {
            return Ok(());
        }
        st.index.status = status;
        st.index.updated_ms = now_ms();
        if status == SessionStatus::Failed {
            st.index.error = detail.clone();
        }
        write_json_atomic(&self.dir.join(INDEX_FILE), &st.index)?;
        self.publish(&mut st, EventPayload::Status { status, detail })
    }

    fn finish(
        &self,
        document: Option<ResearchDocument>,
        export: &ExportOptions,
    ) -> Result<(), ServiceError> {
        if let Some(doc) = &document {
            write_json_atomic(&self.dir.join(DOCUMENT_FILE), doc)?;
            let files = export_document(doc, &self.dir, export)?;
            let slug = files
                .markdown
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned());
            let mut st = self.lock();
            st.document = Some(doc.clone());
            st.index.document_slug = slug;
        }
        self.human.close();
        self.set_status(SessionStatus::Finished, None)
    }

    fn fail(&self, message: String) {
        tracing::error!(session = %self.id, error = %message, "session failed");
        self.human.close();
        if let Err(e) = self.set_status(SessionStatus::Failed, Some(message)) {
            tracing::error!(session = %self.id, error = %e, "cannot record failure");
        }
    }
}

/// What a restarted run must reproduce before it continues live.
struct Resume {
    entries: Vec<TranscriptEntry>,
    /// Persisted interventions: transcript seq, text, and whether it answered
    /// an explicit wait for the human.
    interventions: Vec<(u64, String, bool)>,
    trace: Vec<TraceRecord>,
}

impl Resume {
    fn from_events(events: &[SessionEvent], trace: Vec<TraceRecord>) -> Self {
        let mut entries = Vec::new();
        let mut interventions = Vec::new();
        let mut waiting = false;
        for e in events {
            match &e.payload {
                EventPayload::Status { status, .. } => {
                    waiting = *status == SessionStatus::AwaitingHuman
                }
                EventPayload::Entry { entry } => {
                    if entry.kind == EntryKind::HumanIntervention {
                        interventions.push((entry.seq, entry.content.clone(), waiting));
                    }
                    entries.push(entry.clone());
                }
            }
        }
        Self {
            entries,
            interventions,
            trace,
        }
    }

    fn served(&self) -> usize {
        self.trace
            .iter()
            .filter(|r| matches!(r.event, TraceEvent::Response { .. }))
            .count()
    }
}

/// Streams transcript entries of a run into the session, skipping the
/// prefix a resumed run reproduces.
struct RunObserver<'a> {
    handle: &'a SessionHandle,
    prefix: Vec<TranscriptEntry>,
    seen: usize,
    error: Option<String>,
}

impl Observer for RunObserver<'_> {
    fn entry(&mut self, entry: &TranscriptEntry) {
        self.seen += 1;
        if self.error.is_some() {
            return;
        }
        if let Some(old) = self.prefix.get(entry.seq as usize) {
            if !old.same_as(entry) {
                self.error = Some(format!(
                    "resumed run diverged from the persisted transcript at entry {}",
                    entry.seq
                ));
            }
            return;
        }
        if let Err(e) = self.handle.publish_entry(entry) {
            self.error = Some(e.to_string());
        }
    }

    fn awaiting_human(&mut self, waiting: bool) {
        if self.seen < self.prefix.len() || self.error.is_some() {
            return;
        }
        let status = if waiting {
            SessionStatus::AwaitingHuman
        } else {
            SessionStatus::Running
        };
        if let Err(e) = self.handle.set_status(status, None) {
            self.error = Some(e.to_string());
        }
    }
}

/// Human messages for a run: persisted ones are replayed at their original
/// positions, then the live queue takes over.
struct RunInterventions<'a> {
    handle: &'a SessionHandle,
    replay: VecDeque<(u64, String, bool)>,
    prefix_len: u64,
    timeout: Duration,
}

impl InterventionSource for RunInterventions<'_> {
    fn drain(&mut self, next_seq: u64) -> Vec<String> {
        let mut out = Vec::new();
        let mut seq = next_seq;
        while let Some((s, _, false)) = self.replay.front() {
            if *s != seq {
                break;
            }
            out.push(self.replay.pop_front().expect("front exists").1);
            seq += 1;
        }
        if seq >= self.prefix_len {
            out.extend(self.handle.human.drain());
        }
        out
    }

    fn wait_for_human(&mut self, next_seq: u64) -> Option<String> {
        if let Some((s, _, true)) = self.replay.front() {
            if *s == next_seq {
                return self.replay.pop_front().map(|r| r.1);
            }
        }
        if next_seq < self.prefix_len {
            return None;
        }
        self.handle.human.wait(self.timeout)
    }
}

struct Inner {
    cfg: AppConfig,
    data_dir: PathBuf,
    graph: Option<Arc<GraphData>>,
    factory: Arc<dyn BackendFactory>,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
}

/// Owns every session of one process. Cheap to clone.
#[derive(Clone)]
pub struct SessionManager {
    inner: Arc<Inner>,
}

impl SessionManager {
    pub fn new(
        cfg: AppConfig,
        data_dir: impl Into<PathBuf>,
        graph: Option<Arc<GraphData>>,
        factory: Arc<dyn BackendFactory>,
    ) -> Result<Self, ServiceError> {
        let data_dir = data_dir.into();
        std::fs::create_dir_all(&data_dir)
            .map_err(|e| ServiceError::storage(data_dir.display(), e))?;
        Ok(Self {
            inner: Arc::new(Inner {
                cfg,
                data_dir,
                graph,
                factory,
                sessions: RwLock::new(HashMap::new()),
            }),
        })
    }

    pub fn config(&self) -> &AppConfig {
        &self.inner.cfg
    }

    pub fn graph(&self) -> Option<&Arc<GraphData>> {
        self.inner.graph.as_ref()
    }

    pub fn data_dir(&self) -> &Path {
        &self.inner.data_dir
    }

    pub fn get(&self, id: &str) -> Result<Arc<SessionHandle>, ServiceError> {
        self.inner
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("session `{id}`")))
    }

    pub fn list(&self) -> Vec<SessionSummary> {
        let mut out: Vec<SessionSummary> = self
            .inner
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .map(|h| h.summary())
            .collect();
        out.sort_by(|a, b| (a.created_ms, &a.id).cmp(&(b.created_ms, &b.id)));
        out
    }

    /// Validates and persists a new session and starts its run in the
    /// background; returns as soon as the session is recorded.
    pub fn create(&self, req: &SessionRequest) -> Result<Arc<SessionHandle>, ServiceError> {
        let graph = self
            .inner
            .graph
            .clone()
            .ok_or_else(|| ServiceError::State("no graph is loaded".into()))?;
        let spec = resolve_spec(&self.inner.cfg, &graph, req)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let dir = self.inner.data_dir.join(&id);
        std::fs::create_dir_all(&dir).map_err(|e| ServiceError::storage(dir.display(), e))?;
        let now = now_ms();
        let index = SessionIndex {
            id: id.clone(),
            spec,
            status: SessionStatus::Running,
            created_ms: now,
            updated_ms: now,
            error: None,
            document_slug: None,
        };
        write_json_atomic(&dir.join(INDEX_FILE), &index)?;
        let (log, _) = EventLog::open(&dir.join(EVENTS_FILE))?;
        let handle = Arc::new(SessionHandle {
            id: id.clone(),
            dir,
            state: Mutex::new(State {
                index,
                events: Vec::new(),
                transcript: Vec::new(),
                document: None,
                log,
            }),
            changed: Condvar::new(),
            tx: broadcast::channel(CHANNEL_CAPACITY).0,
            human: HumanQueue::default(),
        });
        {
            let mut st = handle.lock();
            handle.publish(
                &mut st,
                EventPayload::Status {
                    status: SessionStatus::Running,
                    detail: None,
                },
            )?;
        }
        self.inner
            .sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id, handle.clone());
        self.spawn(graph, handle.clone(), None);
        tracing::info!(session = %handle.id, "session created");
        Ok(handle)
    }

    /// Queues a human message for a running group chat; returns the queue
    /// length.
    pub fn post_human_message(&self, id: &str, text: &str) -> Result<usize, ServiceError> {
        let h = self.get(id)?;
        let (mode, status) = {
            let st = h.lock();
            (st.index.spec.mode, st.index.status)
        };
        if mode != SessionMode::GroupChat {
            return Err(ServiceError::UnsupportedMode(format!(
                "session `{id}` is {mode}; human messages need a group_chat session"
            )));
        }
        if status.is_terminal() {
            return Err(ServiceError::State(format!(
                "session `{id}` is {}; it no longer accepts messages",
                serde_json::to_value(status)
                    .expect("status serializes")
                    .as_str()
                    .unwrap_or_default()
            )));
        }
        let text = text.trim();
        if text.is_empty() {
            return Err(ServiceError::Validation("text must be non-empty".into()));
        }
        h.human.push(text.to_string())
    }

    /// Loads every session under the data directory. Sessions that were
    /// still running are resumed: their recorded model traffic is replayed
    /// to rebuild the persisted transcript, then the run continues.
    pub fn recover(&self) -> Result<Vec<String>, ServiceError> {
        let mut resumed = Vec::new();
        let dir = &self.inner.data_dir;
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| ServiceError::storage(dir.display(), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(INDEX_FILE).is_file())
            .collect();
        dirs.sort();
        for d in dirs {
            match self.load_one(&d) {
                Ok(Some(id)) => resumed.push(id),
                Ok(None) => {}
                Err(e) => tracing::error!(dir = %d.display(), error = %e, "cannot load session"),
            }
        }
        Ok(resumed)
    }

    fn load_one(&self, dir: &Path) -> Result<Option<String>, ServiceError> {
        let index: SessionIndex = read_json(&dir.join(INDEX_FILE))?;
        if self.get(&index.id).is_ok() {
            return Ok(None);
        }
        let (log, events) = EventLog::open(&dir.join(EVENTS_FILE))?;
        let transcript: Vec<TranscriptEntry> =
            events.iter().filter_map(|e| e.entry().cloned()).collect();
        let document = match dir.join(DOCUMENT_FILE) {
            p if p.is_file() => Some(read_json(&p)?),
            _ => None,
        };
        let mut index = index;
        if let Some(status) = events.iter().rev().find_map(SessionEvent::status) {
            index.status = status;
        }
        let id = index.id.clone();
        let live = !index.status.is_terminal();
        let handle = Arc::new(SessionHandle {
            id: id.clone(),
            dir: dir.to_path_buf(),
            state: Mutex::new(State {
                index,
                events: events.clone(),
                transcript,
                document,
                log,
            }),
            changed: Condvar::new(),
            tx: broadcast::channel(CHANNEL_CAPACITY).0,
            human: HumanQueue::default(),
        });
        if !live {
            handle.human.close();
        }
        self.inner
            .sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id.clone(), handle.clone());
        if !live {
            return Ok(None);
        }
        let Some(graph) = self.inner.graph.clone() else {
            handle.fail("cannot resume: no graph is loaded".into());
            return Ok(None);
        };
        let trace = load_trace(&dir.join(TRACE_FILE))?;
        let resume = Resume::from_events(&events, trace);
        tracing::info!(session = %id, entries = resume.entries.len(), "resuming session");
        self.spawn(graph, handle, Some(resume));
        Ok(Some(id))
    }

    fn spawn(&self, graph: Arc<GraphData>, handle: Arc<SessionHandle>, resume: Option<Resume>) {
        let inner = self.inner.clone();
        let name = format!("session-{}", &handle.id[..handle.id.len().min(8)]);
        let result = std::thread::Builder::new().name(name).spawn(move || {
            let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
                run_session(&inner, &graph, &handle, resume)
            }));
            match outcome {
                Ok(Ok(doc)) => {
                    let export = ExportOptions {
                        pdf_command: inner.cfg.export.pdf_command.clone(),
                    };
                    if let Err(e) = handle.finish(doc, &export) {
                        handle.fail(format!("cannot store the result: {e}"));
                    }
                }
                Ok(Err(msg)) => handle.fail(msg),
                Err(_) => handle.fail("session run panicked".into()),
            }
        });
        if let Err(e) = result {
            tracing::error!(error = %e, "cannot start session thread");
        }
    }
}

fn run_session(
    inner: &Inner,
    graph: &GraphData,
    handle: &SessionHandle,
    resume: Option<Resume>,
) -> Result<Option<ResearchDocument>, String> {
    let spec = handle.spec();
    let trace = TraceLog::to_file(&handle.dir.join(TRACE_FILE))
        .map_err(|e| format!("cannot open trace: {e}"))?;
    let served = resume.as_ref().map_or(0, Resume::served);
    let live = inner
        .factory
        .chat(&spec, served)
        .map_err(|e| e.to_string())?;
    let traced = TracedChat::new(live, trace);
    let chat: Box<dyn ChatBackend> = match &resume {
        Some(r) => Box::new(ResumeBackend::new(&r.trace, traced)),
        None => Box::new(traced),
    };
    let search = if spec.novelty {
        inner.factory.search(&spec)
    } else {
        None
    };
    let (prefix, interventions) = match resume {
        Some(r) => (r.entries, r.interventions),
        None => (Vec::new(), Vec::new()),
    };
    let prefix_len = prefix.len() as u64;
    let mut observer = RunObserver {
        handle,
        prefix,
        seen: 0,
        error: None,
    };
    let engine = graph.engine();

    let document = match spec.mode {
        SessionMode::Scripted => {
            let mut cfg = inner.cfg.pipeline_config(spec.path.clone());
            cfg.novelty = spec.novelty;
            cfg.parallel_expansions = spec.parallel_expansions;
            let out = run_scripted_pipeline(
                engine,
                chat.as_ref(),
                search.as_deref(),
                spec.keyword_1.as_deref(),
                spec.keyword_2.as_deref(),
                &cfg,
                &mut observer,
            );
            if let Some(e) = observer.error.take() {
                return Err(e);
            }
            Some(out.map_err(|e| e.to_string())?.document)
        }
        SessionMode::GroupChat => {
            let roster = default_roster(&inner.cfg.agents);
            let mut tools = ToolRegistry::new(engine, spec.path.clone());
            if let Some(s) = search.as_deref() {
                tools = tools.with_novelty(
                    chat.as_ref(),
                    s as &dyn LiteratureSearch,
                    inner.cfg.novelty.clone(),
                );
            }
            let mut source = RunInterventions {
                handle,
                replay: interventions.into(),
                prefix_len,
                timeout: Duration::from_secs(inner.cfg.group_chat.human_timeout_secs),
            };
            let task = spec
                .task
                .clone()
                .unwrap_or_else(|| prompts::DEFAULT_TASK.plain().to_string());
            let out = run_group_chat(
                &task,
                &roster,
                &mut tools,
                chat.as_ref(),
                &inner.cfg.group_chat_config(Some(spec.max_turns)),
                &mut source,
                &mut observer,
            );
            if let Some(e) = observer.error.take() {
                return Err(e);
            }
            out.map_err(|e| e.to_string())?.document
        }
    };
    if (observer.seen as u64) < prefix_len {
        return Err(format!(
            "resumed run produced {} entries, fewer than the {prefix_len} persisted",
            observer.seen
        ));
    }
    Ok(document)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn human_queue_is_fifo_and_closable() {
        let q = HumanQueue::default();
        q.push("a".into()).unwrap();
        q.push("b".into()).unwrap();
        assert_eq!(q.drain(), vec!["a", "b"]);
        assert_eq!(q.wait(Duration::from_millis(5)), None);
        q.push("c".into()).unwrap();
        assert_eq!(q.wait(Duration::from_millis(5)).as_deref(), Some("c"));
        q.close();
        assert!(q.push("d".into()).is_err());
    }

    #[test]
    fn resume_marks_wait_replies() {
        let entry = |seq, kind, content: &str| SessionEvent {
            session_id: "s".into(),
            seq,
            payload: EventPayload::Entry {
                entry: TranscriptEntry {
                    seq,
                    author: "human".into(),
                    kind,
                    content: content.into(),
                    call_id: None,
                    tool_name: None,
                    timestamp_ms: 0,
                },
            },
        };
        let status = |seq, status| SessionEvent {
            session_id: "s".into(),
            seq,
            payload: EventPayload::Status {
                status,
                detail: None,
            },
        };
        let events = vec![
            status(0, SessionStatus::Running),
            entry(1, EntryKind::Message, "task"),
            entry(2, EntryKind::HumanIntervention, "drained"),
            status(3, SessionStatus::AwaitingHuman),
            entry(4, EntryKind::HumanIntervention, "answered"),
            status(5, SessionStatus::Running),
        ];
        let r = Resume::from_events(&events, Vec::new());
        assert_eq!(r.entries.len(), 3);
        assert_eq!(
            r.interventions,
            vec![
                (2, "drained".to_string(), false),
                (4, "answered".to_string(), true)
            ]
        );
    }
}
