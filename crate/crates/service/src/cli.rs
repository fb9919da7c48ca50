//! Command line: a thin client of the session engine.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hypograph_core::agents::{EntryKind, TranscriptEntry};
use hypograph_core::path::{path_html, subgraph_graphml, LegMode, PathConfig, PathMode};
use hypograph_core::proposal::{export_document, ExportOptions, ResearchDocument};
use tokio::sync::broadcast::error::RecvError;

use crate::api;
use crate::backends::factory_for;
use crate::config::AppConfig;
use crate::error::ServiceError;
use crate::events::{
    read_json, EventPayload, SessionEvent, SessionMode, SessionOverrides, SessionRequest,
    SessionStatus, DOCUMENT_FILE,
};
use crate::runtime::GraphData;
use crate::session::{SessionHandle, SessionManager};

#[derive(Debug, Parser)]
#[command(
    name = "hypograph",
    version,
    about = "Knowledge-graph driven multi-agent research hypothesis engine"
)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "HYPOGRAPH_CONFIG")]
    pub config: Option<PathBuf>,
    /// GraphML knowledge graph; overrides graph.path.
    #[arg(long, global = true)]
    pub graph: Option<PathBuf>,
    /// Canned model replies, hashing embeddings and no network access.
    #[arg(long, global = true)]
    pub offline: bool,
    /// Serve model replies from a recorded trace file.
    #[arg(long, global = true)]
    pub replay: Option<PathBuf>,
    /// Directory holding session records; overrides server.data_dir.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Log filter, e.g. `info` or `hypograph_core=debug`.
    #[arg(long, global = true, env = "RUST_LOG", default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct BackendArgs {
    /// Chat completions base URL.
    #[arg(long, global = true)]
    pub chat_endpoint: Option<String>,
    #[arg(long, global = true)]
    pub chat_model: Option<String>,
    /// Embeddings base URL.
    #[arg(long, global = true)]
    pub embedding_endpoint: Option<String>,
    #[arg(long, global = true)]
    pub embedding_model: Option<String>,
    /// Literature search base URL.
    #[arg(long, global = true)]
    pub search_url: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Random,
    Shortest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LegArg {
    Heuristic,
    Bfs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PathArgs {
    /// Noise weight of the randomized search, in [0, 10].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Number of random waypoints.
    #[arg(long)]
    pub waypoints: Option<usize>,
    /// Subgraph radius around the path: 0, 1 or 2.
    #[arg(long)]
    pub hops: Option<u8>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Search used for the waypoint legs.
    #[arg(long, value_enum)]
    pub leg_mode: Option<LegArg>,
}

impl PathArgs {
    fn apply(&self, base: &PathConfig) -> PathConfig {
        PathConfig {
            alpha: self.alpha.unwrap_or(base.alpha),
            k_waypoints: self.waypoints.unwrap_or(base.k_waypoints),
            hops: self.hops.unwrap_or(base.hops),
            seed: self.seed.unwrap_or(base.seed),
            mode: match self.mode {
                Some(ModeArg::Random) => PathMode::Random,
                Some(ModeArg::Shortest) => PathMode::Shortest,
                None => base.mode,
            },
            leg_mode: match self.leg_mode {
                Some(LegArg::Heuristic) => LegMode::Heuristic,
                Some(LegArg::Bfs) => LegMode::Bfs,
                None => base.leg_mode,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PathFormat {
    Text,
    Json,
    Graphml,
    Html,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    All,
    Md,
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load the graph, compute missing embeddings and print statistics.
    Ingest,
    /// Sample a path between two concepts (node ids, labels or free text).
    Path {
        from: String,
        to: String,
        #[command(flatten)]
        path: PathArgs,
        #[arg(long, value_enum, default_value = "text")]
        format: PathFormat,
        /// Write to this file instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the scripted pipeline and export the research document.
    Generate {
        #[arg(long)]
        keyword_1: Option<String>,
        #[arg(long)]
        keyword_2: Option<String>,
        #[command(flatten)]
        path: PathArgs,
        /// Number of sessions to run one after another; seeds increase by
        /// one per session.
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Also export documents into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_novelty: bool,
        /// Run the seven expansions concurrently.
        #[arg(long)]
        parallel: bool,
        /// Print only the exported file paths.
        #[arg(long, short)]
        quiet: bool,
    },
    /// Run a group chat; lines typed on standard input are sent as human
    /// messages.
    Chat {
        #[arg(long)]
        keyword_1: Option<String>,
        #[arg(long)]
        keyword_2: Option<String>,
        #[arg(long)]
        task: Option<String>,
        #[command(flatten)]
        path: PathArgs,
        #[arg(long)]
        max_turns: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_novelty: bool,
    },
    /// Serve the HTTP API, resuming interrupted sessions first.
    Serve {
        /// Address to listen on; overrides server.bind.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Export the document of a finished session.
    Export {
        session: String,
        /// Target directory; defaults to the session directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        format: ExportFormat,
    },
}

/// Reads the configuration file and applies command-line overrides.
pub fn load_config(cli: &Cli) -> Result<AppConfig, ServiceError> {
    let mut cfg = match &cli.config {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    if let Some(g) = &cli.graph {
        cfg.graph.path = Some(g.clone());
    }
    if let Some(d) = &cli.data_dir {
        cfg.server.data_dir = d.clone();
    }
    cfg.offline |= cli.offline;
    let b = &cli.backend;
    if let Some(v) = &b.chat_endpoint {
        cfg.chat.endpoint = v.clone();
    }
    if let Some(v) = &b.chat_model {
        cfg.chat.model = v.clone();
    }
    if let Some(v) = &b.embedding_endpoint {
        cfg.embedding.backend.endpoint = v.clone();
    }
    if let Some(v) = &b.embedding_model {
        cfg.embedding.backend.model = v.clone();
    }
    if let Some(v) = &b.search_url {
        cfg.search.client.base_url = v.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn manager(
    cli: &Cli,
    cfg: &AppConfig,
    graph: Option<Arc<GraphData>>,
) -> Result<SessionManager, ServiceError> {
    let factory = factory_for(cfg, cli.replay.as_deref())?;
    SessionManager::new(cfg.clone(), cfg.server.data_dir.clone(), graph, factory)
}

/// Runs the parsed command.
pub fn run(cli: Cli) -> Result<(), ServiceError> {
    let cfg = load_config(&cli)?;
    let mut out = std::io::stdout().lock();
    match &cli.command {
        Command::Ingest => {
            let g = GraphData::from_config(&cfg)?;
            let stats = serde_json::to_string_pretty(&g.stats()).expect("stats serialize");
            writeln!(out, "{stats}").map_err(stdout_err)?;
        }
        Command::Path {
            from,
            to,
            path,
            format,
            out: file,
        } => {
            let g = GraphData::from_config(&cfg)?;
            let sample = g.path(from, to, &path.apply(&cfg.path))?;
            let text = match format {
                PathFormat::Text => format!("{}\n", sample.path_string),
                PathFormat::Json => {
                    serde_json::to_string_pretty(&sample).expect("path serializes") + "\n"
                }
                PathFormat::Graphml => subgraph_graphml(&sample, &cfg.graph.options()),
                PathFormat::Html => path_html(&sample),
            };
            match file {
                Some(p) => {
                    std::fs::write(p, text).map_err(|e| ServiceError::storage(p.display(), e))?
                }
                None => out.write_all(text.as_bytes()).map_err(stdout_err)?,
            }
        }
        Command::Generate {
            keyword_1,
            keyword_2,
            path,
            count,
            out: dir,
            no_novelty,
            parallel,
            quiet,
        } => {
            let m = manager(&cli, &cfg, Some(Arc::new(GraphData::from_config(&cfg)?)))?;
            let base = path.apply(&cfg.path);
            let mut failures = 0;
            for i in 0..*count {
                let req = SessionRequest {
                    mode: SessionMode::Scripted,
                    keyword_1: keyword_1.clone(),
                    keyword_2: keyword_2.clone(),
                    task: None,
                    cfg: overrides(&base, i as u64, !no_novelty, None, *parallel),
                };
                let h = m.create(&req)?;
                writeln!(out, "session {}", h.id()).map_err(stdout_err)?;
                let status = follow(&h, &mut out, *quiet)?;
                match (status, h.document()) {
                    (SessionStatus::Finished, Some(doc)) => {
                        report_exports(&h, &doc, dir.as_deref(), &cfg, &mut out)?
                    }
                    _ => {
                        failures += 1;
                        let err = h
                            .view()
                            .error
                            .unwrap_or_else(|| "no document produced".into());
                        writeln!(out, "session {} failed: {err}", h.id()).map_err(stdout_err)?;
                    }
                }
            }
            if failures > 0 {
                return Err(ServiceError::State(format!(
                    "{failures} of {count} session(s) failed"
                )));
            }
        }
        Command::Chat {
            keyword_1,
            keyword_2,
            task,
            path,
            max_turns,
            out: dir,
            no_novelty,
        } => {
            let m = manager(&cli, &cfg, Some(Arc::new(GraphData::from_config(&cfg)?)))?;
            let base = path.apply(&cfg.path);
            let req = SessionRequest {
                mode: SessionMode::GroupChat,
                keyword_1: keyword_1.clone(),
                keyword_2: keyword_2.clone(),
                task: task.clone(),
                cfg: overrides(&base, 0, !no_novelty, *max_turns, false),
            };
            let h = m.create(&req)?;
            writeln!(out, "session {} (type a line to intervene)", h.id()).map_err(stdout_err)?;
            let (mm, id) = (m.clone(), h.id().to_string());
            std::thread::spawn(move || {
                for line in std::io::stdin().lock().lines().map_while(Result::ok) {
                    if line.trim().is_empty() {
                        continue;
                    }
                    if let Err(e) = mm.post_human_message(&id, &line) {
                        eprintln!("message not sent: {e}");
                        break;
                    }
                }
            });
            let status = follow(&h, &mut out, false)?;
            if let Some(doc) = h.document() {
                report_exports(&h, &doc, dir.as_deref(), &cfg, &mut out)?;
            }
            if status == SessionStatus::Failed {
                return Err(ServiceError::State(
                    h.view().error.unwrap_or_else(|| "session failed".into()),
                ));
            }
        }
        Command::Serve { bind } => {
            let graph = match GraphData::from_config(&cfg) {
                Ok(g) => Some(Arc::new(g)),
                Err(ServiceError::State(msg)) => {
                    tracing::warn!("{msg}; graph endpoints and session creation are disabled");
                    None
                }
                Err(e) => return Err(e),
            };
            let m = manager(&cli, &cfg, graph)?;
            let resumed = m.recover()?;
            if !resumed.is_empty() {
                tracing::info!(count = resumed.len(), "resumed interrupted sessions");
            }
            let bind = bind.clone().unwrap_or_else(|| cfg.server.bind.clone());
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| ServiceError::Storage(format!("cannot start runtime: {e}")))?;
            writeln!(out, "listening on {bind}").map_err(stdout_err)?;
            drop(out);
            rt.block_on(api::serve(m, &bind))?;
        }
        Command::Export {
            session,
            out: dir,
            format,
        } => {
            let session_dir = cfg.server.data_dir.join(session);
            let doc_path = session_dir.join(DOCUMENT_FILE);
            if !doc_path.is_file() {
                return Err(ServiceError::NotFound(format!(
                    "session `{session}` has no document in {}",
                    cfg.server.data_dir.display()
                )));
            }
            let doc: ResearchDocument = read_json(&doc_path)?;
            let target = dir.clone().unwrap_or(session_dir);
            for p in export_files(&doc, &target, *format, &cfg)? {
                writeln!(out, "{}", p.display()).map_err(stdout_err)?;
            }
        }
    }
    Ok(())
}

fn overrides(
    base: &PathConfig,
    offset: u64,
    novelty: bool,
    max_turns: Option<usize>,
    parallel: bool,
) -> SessionOverrides {
    SessionOverrides {
        alpha: Some(base.alpha),
        waypoints: Some(base.k_waypoints),
        hops: Some(base.hops),
        seed: Some(base.seed.wrapping_add(offset)),
        path_mode: Some(base.mode),
        novelty: Some(novelty),
        max_turns,
        parallel_expansions: Some(parallel),
    }
}

fn stdout_err(e: std::io::Error) -> ServiceError {
    ServiceError::storage("stdout", e)
}

/// Writes the requested export files of `doc` into `dir`.
pub fn export_files(
    doc: &ResearchDocument,
    dir: &Path,
    format: ExportFormat,
    cfg: &AppConfig,
) -> Result<Vec<PathBuf>, ServiceError> {
    let opts = ExportOptions {
        pdf_command: if format == ExportFormat::All {
            cfg.export.pdf_command.clone()
        } else {
            None
        },
    };
    let files = export_document(doc, dir, &opts)?;
    let mut all = vec![files.markdown, files.csv, files.json];
    all.extend(files.pdf);
    let keep = |p: &PathBuf| {
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or_default();
        match format {
            ExportFormat::All => true,
            ExportFormat::Md => ext == "md",
            ExportFormat::Csv => ext == "csv",
            ExportFormat::Json => ext == "json",
        }
    };
    let (kept, dropped): (Vec<PathBuf>, Vec<PathBuf>) = all.into_iter().partition(keep);
    for p in dropped {
        let _ = std::fs::remove_file(p);
    }
    Ok(kept)
}

fn report_exports(
    h: &SessionHandle,
    doc: &ResearchDocument,
    extra: Option<&Path>,
    cfg: &AppConfig,
    out: &mut impl Write,
) -> Result<(), ServiceError> {
    let dir = extra.unwrap_or(h.dir());
    let files = if extra.is_some() {
        export_files(doc, dir, ExportFormat::All, cfg)?
    } else {
        let slug = hypograph_core::proposal::document_slug(&doc.start_node, &doc.end_node);
        ["md", "csv", "json"]
            .iter()
            .map(|e| dir.join(format!("{slug}.{e}")))
            .collect()
    };
    for f in files {
        writeln!(out, "wrote {}", f.display()).map_err(stdout_err)?;
    }
    Ok(())
}

/// One transcript entry as a console line.
pub fn format_entry(e: &TranscriptEntry) -> String {
    let tag = match e.kind {
        EntryKind::Message => String::new(),
        EntryKind::ToolCall => format!(" -> {}", e.tool_name.as_deref().unwrap_or("tool")),
        EntryKind::ToolResult => format!(" <- {}", e.tool_name.as_deref().unwrap_or("tool")),
        EntryKind::HumanIntervention => " (intervention)".into(),
        EntryKind::Termination => " (end)".into(),
        EntryKind::Warning => " (warning)".into(),
    };
    format!("[{}] {}{tag}: {}", e.seq, e.author, e.content)
}

/// Prints the session's events as they arrive; returns the final status.
fn follow(
    h: &SessionHandle,
    out: &mut impl Write,
    quiet: bool,
) -> Result<SessionStatus, ServiceError> {
    let (past, mut rx) = h.subscribe(0);
    let mut next = 0;
    let mut show =
        |ev: &SessionEvent, out: &mut dyn Write| -> Result<Option<SessionStatus>, ServiceError> {
            if ev.seq < next {
                return Ok(None);
            }
            next = ev.seq + 1;
            match &ev.payload {
                EventPayload::Entry { entry } if !quiet => {
                    writeln!(out, "{}", format_entry(entry)).map_err(stdout_err)?;
                }
                EventPayload::Status { status, detail } => {
                    if *status == SessionStatus::AwaitingHuman {
                        writeln!(out, "(waiting for your message)").map_err(stdout_err)?;
                    }
                    if let Some(d) = detail.as_ref().filter(|_| !quiet) {
                        writeln!(out, "status: {d}").map_err(stdout_err)?;
                    }
                    if status.is_terminal() {
                        return Ok(Some(*status));
                    }
                }
                _ => {}
            }
            Ok(None)
        };
    for ev in &past {
        if let Some(s) = show(ev, out)? {
            return Ok(s);
        }
    }
    let Some(rx) = rx.as_mut() else {
        return Ok(h.status());
    };
    loop {
        match rx.blocking_recv() {
            Ok(ev) => {
                if let Some(s) = show(&ev, out)? {
                    return Ok(s);
                }
            }
            Err(RecvError::Lagged(_)) => {
                for ev in h.subscribe(0).0 {
                    if let Some(s) = show(&ev, out)? {
                        return Ok(s);
                    }
                }
            }
            Err(RecvError::Closed) => return Ok(h.wait_terminal(Duration::from_secs(1))),
        }
    }
}
