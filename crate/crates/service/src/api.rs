//! HTTP API over a [`SessionManager`]; live session events are streamed as
//! server-sent events.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use hypograph_core::path::{path_html, subgraph_graphml, PathConfig, PathMode};
use hypograph_core::proposal::{assemble_document, document_csv, ResearchDocument};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::broadcast;

use crate::error::ServiceError;
use crate::events::{SessionEvent, SessionRequest, SessionStatus};
use crate::session::{SessionHandle, SessionManager};

/// JSON error body: `{"error": {"kind": ..., "message": ...}}`.
#[derive(Debug)]
pub struct ApiError(pub ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = json!({"error": {"kind": self.0.kind(), "message": self.0.to_string()}});
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn bad_request(e: impl std::fmt::Display) -> ApiError {
    ApiError(ServiceError::Validation(e.to_string()))
}

pub fn router(manager: SessionManager) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/events", get(stream_events))
        .route("/sessions/{id}/human-message", post(post_human_message))
        .route("/sessions/{id}/document", get(document_json))
        .route("/sessions/{id}/document.json", get(document_json))
        .route("/sessions/{id}/document.md", get(document_markdown))
        .route("/sessions/{id}/document.csv", get(document_csv_file))
        .route("/graph/stats", get(graph_stats))
        .route("/graph/path", get(graph_path))
        .fallback(|| async { ApiError(ServiceError::NotFound("no such endpoint".into())) })
        .with_state(manager)
}

/// Serves the API on `bind` until Ctrl-C.
pub async fn serve(manager: SessionManager, bind: &str) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| ServiceError::Validation(format!("cannot bind {bind}: {e}")))?;
    let addr = listener
        .local_addr()
        .map(|a| a.to_string())
        .unwrap_or_else(|_| bind.to_string());
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(manager))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Storage(format!("server error: {e}")))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(ServiceError::Storage(format!("worker failed: {e}"))))?
        .map_err(ApiError)
}

async fn create_session(
    State(m): State<SessionManager>,
    body: Result<Json<SessionRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let Json(req) = body.map_err(|e| bad_request(e.body_text()))?;
    let handle = blocking(move || m.create(&req)).await?;
    let id = handle.id().to_string();
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "id": id,
            "status": handle.status(),
            "spec": handle.spec(),
            "events": format!("/sessions/{id}/events"),
        })),
    ))
}

async fn list_sessions(State(m): State<SessionManager>) -> Json<serde_json::Value> {
    Json(json!({ "sessions": m.list() }))
}

async fn get_session(
    State(m): State<SessionManager>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    Ok(Json(m.get(&id)?.view()).into_response())
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    from: Option<u64>,
}

async fn stream_events(
    State(m): State<SessionManager>,
    Path(id): Path<String>,
    query: Result<Query<EventsQuery>, QueryRejection>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let Query(q) = query.map_err(|e| bad_request(e.body_text()))?;
    let handle = m.get(&id)?;
    let last_seen = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok());
    let from = q.from.or(last_seen).unwrap_or(0);
    Ok(Sse::new(event_stream(handle, from)).keep_alive(KeepAlive::default()))
}

struct Cursor {
    handle: Arc<SessionHandle>,
    queue: VecDeque<SessionEvent>,
    rx: Option<broadcast::Receiver<SessionEvent>>,
    next: u64,
    done: bool,
}

/// Persisted events from `from` on, then live ones, ending after the
/// terminal status event.
pub fn event_stream(
    handle: Arc<SessionHandle>,
    from: u64,
) -> impl Stream<Item = Result<Event, Infallible>> {
    let (past, rx) = handle.subscribe(from);
    let cursor = Cursor {
        handle,
        queue: past.into(),
        rx,
        next: from,
        done: false,
    };
    futures::stream::unfold(cursor, |mut c| async move {
        loop {
            if let Some(ev) = c.queue.pop_front() {
                if ev.seq < c.next {
                    continue;
                }
                c.next = ev.seq + 1;
                if ev.status().is_some_and(SessionStatus::is_terminal) {
                    c.done = true;
                }
                let event = Event::default()
                    .id(ev.seq.to_string())
                    .event(ev.kind())
                    .json_data(&ev)
                    .expect("events serialize");
                return Some((Ok(event), c));
            }
            if c.done {
                return None;
            }
            let rx = c.rx.as_mut()?;
            match rx.recv().await {
                Ok(ev) => c.queue.push_back(ev),
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    c.queue.extend(c.handle.subscribe(c.next).0);
                }
                Err(broadcast::error::RecvError::Closed) => {
                    c.queue.extend(c.handle.subscribe(c.next).0);
                    c.rx = None;
                }
            }
        }
    })
}

#[derive(Debug, Deserialize)]
struct HumanMessage {
    text: String,
}

async fn post_human_message(
    State(m): State<SessionManager>,
    Path(id): Path<String>,
    body: Result<Json<HumanMessage>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    m.get(&id)?;
    let Json(msg) = body.map_err(|e| bad_request(e.body_text()))?;
    let queued = m.post_human_message(&id, &msg.text)?;
    Ok((StatusCode::ACCEPTED, Json(json!({"queued": queued}))))
}

fn document_of(m: &SessionManager, id: &str) -> ApiResult<ResearchDocument> {
    let h = m.get(id)?;
    match h.document() {
        Some(d) => Ok(d),
        None if h.status().is_terminal() => {
            Err(ServiceError::NotFound(format!("session `{id}` produced no document")).into())
        }
        None => Err(ServiceError::State(format!("session `{id}` has not finished yet")).into()),
    }
}

async fn document_json(
    State(m): State<SessionManager>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    Ok(Json(document_of(&m, &id)?).into_response())
}

async fn document_markdown(
    State(m): State<SessionManager>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let text = assemble_document(&document_of(&m, &id)?).map_err(ServiceError::from)?;
    Ok((
        [(header::CONTENT_TYPE, "text/markdown; charset=utf-8")],
        text,
    )
        .into_response())
}

async fn document_csv_file(
    State(m): State<SessionManager>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let text = document_csv(&document_of(&m, &id)?);
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], text).into_response())
}

async fn graph_stats(State(m): State<SessionManager>) -> ApiResult<Response> {
    let g = m
        .graph()
        .ok_or_else(|| ServiceError::State("no graph is loaded".into()))?;
    Ok(Json(g.stats()).into_response())
}

#[derive(Debug, Deserialize)]
struct PathQuery {
    from: String,
    to: String,
    alpha: Option<f64>,
    waypoints: Option<usize>,
    hops: Option<u8>,
    seed: Option<u64>,
    mode: Option<PathMode>,
    /// `json` (default), `graphml` or `html`.
    format: Option<String>,
}

async fn graph_path(
    State(m): State<SessionManager>,
    query: Result<Query<PathQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query.map_err(|e| bad_request(e.body_text()))?;
    let graph = m
        .graph()
        .cloned()
        .ok_or_else(|| ServiceError::State("no graph is loaded".into()))?;
    let d = &m.config().path;
    let cfg = PathConfig {
        alpha: q.alpha.unwrap_or(d.alpha),
        k_waypoints: q.waypoints.unwrap_or(d.k_waypoints),
        hops: q.hops.unwrap_or(d.hops),
        seed: q.seed.unwrap_or(d.seed),
        mode: q.mode.unwrap_or(d.mode),
        leg_mode: d.leg_mode,
    };
    cfg.validate()
        .map_err(|e| ServiceError::Validation(e.to_string()))?;
    let format = q.format.unwrap_or_else(|| "json".into());
    if !matches!(format.as_str(), "json" | "graphml" | "html") {
        return Err(bad_request(format!(
            "format must be json, graphml or html, got `{format}`"
        )));
    }
    let opts = m.config().graph.options();
    let (from, to) = (q.from, q.to);
    let sample = blocking(move || graph.path(&from, &to, &cfg)).await?;
    Ok(match format.as_str() {
        "graphml" => (
            [(header::CONTENT_TYPE, "application/xml")],
            subgraph_graphml(&sample, &opts),
        )
            .into_response(),
        "html" => (
            [(header::CONTENT_TYPE, "text/html; charset=utf-8")],
            path_html(&sample),
        )
            .into_response(),
        _ => Json(sample).into_response(),
    })
}
