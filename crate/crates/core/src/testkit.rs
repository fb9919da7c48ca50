//! Canned model replies and a local HTTP stub for offline runs and tests.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use crate::gateway::{ChatResponse, ToolCall};
use crate::proposal::{field_title, PROPOSAL_KEYS};

/// A scored evaluation in the shape the novelty assistant produces.
pub const NOVELTY_VERDICT: &str = "Novelty:\nScore: 8/10\nThe concept of integrating biomimetic materials with microfluidic chips to enhance heat transfer and biocompatibility is relatively novel. The specific idea of using the lamellar structure inspired by keratin scales and engineering it into microfluidic chips using soft lithography techniques appears to be unique, as no direct matches were found in the\nliterature. The existing literature does cover various aspects of microfluidic chip enhancements, including heat transfer, biocompatibility, and mechanical behavior, but the specific\ncombination and approach proposed here seem to be unexplored.\n\nFeasibility:\nScore: 7/10\nThe feasibility of engineering lamellar structures inspired by keratin scales into microfluidic chips using soft lithography techniques is plausible. Soft lithography is a wellestablished method for fabricating microstructures, and biomimetic materials have been successfully integrated into various biomedical applications.\nHowever, the practical implementation of this specific structure and its performance under cyclic loading conditions would require thorough experimental validation. The\ncomplexity of achieving the desired mechanical behavior and heat transfer efficiency in a reliable and reproducible manner could pose challenges.\nTERMINATE";

pub const DEFINITIONS: &str = "### Definitions:\n- silk: a protein fiber spun by silkworms and spiders.\n- biocompatibility: the ability of a material to perform with an appropriate host response.\n- energy-intensive: requiring a large amount of energy.\n\n### Relationships:\n- silk provides biocompatibility, which reduces the need for energy-intensive processing.";

/// Distinctive canned content for one proposal field.
pub fn field_content(key: &str) -> String {
    format!("Canned {key} content <{}>.", key.to_uppercase())
}

/// The canned proposal as a fenced JSON reply.
pub fn proposal_reply() -> String {
    let body = PROPOSAL_KEYS
        .iter()
        .map(|k| format!("  \"{k}\": \"{}\"", field_content(k)))
        .collect::<Vec<_>>()
        .join(",\n");
    format!("```json\n{{\n{body}\n}}\n```")
}

pub fn expansion_reply(key: &str) -> String {
    format!(
        "### Expanded {}\n\nA deeper treatment of the {} aspect with quantitative detail.",
        field_title(key),
        key.replace('_', " ")
    )
}

pub const CRITIQUE: &str = "Summary: the proposal links silk to low-energy processing.\n\nStrengths: clear mechanism. Weaknesses: no preliminary data. Improvements: run pilot studies.";
pub const MODELING: &str = "Question: how does beta-sheet content set stiffness?\n\n1. Build atomistic models.\n2. Run molecular dynamics.";
pub const SYNBIO: &str = "Question: can recombinant spidroins be spun at room temperature?\n\n1. Express spidroin in E. coli.\n2. Spin fibers from aqueous dope.";

/// The twelve replies the scripted pipeline consumes, in call order.
pub fn pipeline_replies() -> Vec<ChatResponse> {
    let mut out = vec![
        ChatResponse::text(DEFINITIONS),
        ChatResponse::text(proposal_reply()),
    ];
    out.extend(
        PROPOSAL_KEYS
            .iter()
            .map(|k| ChatResponse::text(expansion_reply(k))),
    );
    out.push(ChatResponse::text(CRITIQUE));
    out.push(ChatResponse::text(MODELING));
    out.push(ChatResponse::text(SYNBIO));
    out
}

pub fn critic_reply() -> String {
    format!("{CRITIQUE}\n\n### Molecular modeling priority\n{MODELING}\n\n### Synthetic biology priority\n{SYNBIO}")
}

pub fn scientist_2_reply() -> String {
    PROPOSAL_KEYS
        .iter()
        .map(|k| expansion_reply(k))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Manager selections and agent replies for a full group chat: planner,
/// assistant (path tool), ontologist, scientist_1, scientist_2, critic, then
/// the assistant rates novelty when `novelty` is set and terminates.
pub fn group_chat_replies(keyword_1: &str, keyword_2: &str, novelty: bool) -> Vec<ChatResponse> {
    let mut args = serde_json::Map::new();
    args.insert("keyword_1".into(), keyword_1.into());
    args.insert("keyword_2".into(), keyword_2.into());
    let mut out = vec![
        "planner".into(),
        ChatResponse::text("Plan: 1. generate a path. 2. define terms. 3. propose. 4. expand. 5. critique. 6. rate."),
        "assistant".into(),
        ChatResponse::with_tool_calls(
            "",
            vec![ToolCall {
                id: "call_path".into(),
                name: "generate_path".into(),
                arguments: args,
            }],
        ),
        "ontologist".into(),
        ChatResponse::text(DEFINITIONS),
        "scientist_1".into(),
        ChatResponse::text(proposal_reply()),
        "scientist_2".into(),
        ChatResponse::text(scientist_2_reply()),
        "critic".into(),
        ChatResponse::text(critic_reply()),
        "assistant".into(),
    ];
    if novelty {
        let mut args = serde_json::Map::new();
        args.insert("hypothesis".into(), field_content("hypothesis").into());
        out.push(ChatResponse::with_tool_calls(
            "",
            vec![ToolCall {
                id: "call_rate".into(),
                name: "rate_novelty_feasibility".into(),
                arguments: args,
            }],
        ));
        out.push(ChatResponse::text(NOVELTY_VERDICT));
        out.push("assistant".into());
    }
    out.push(ChatResponse::text("All steps are complete. TERMINATE"));
    out
}

/// One request received by [`MockServer`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockRequest {
    pub method: String,
    /// Path including the query string.
    pub target: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

/// Minimal HTTP/1.1 server answering each connection with the next queued
/// `(status, body)` pair; 500 once the queue is empty.
pub struct MockServer {
    url: String,
    requests: Arc<Mutex<Vec<MockRequest>>>,
    _handle: JoinHandle<()>,
}

impl MockServer {
    pub fn start(responses: Vec<(u16, String)>) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let url = format!("http://{}", listener.local_addr()?);
        let requests = Arc::new(Mutex::new(Vec::new()));
        let seen = requests.clone();
        let handle = std::thread::spawn(move || {
            let mut queue = responses.into_iter();
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (status, body) = queue
                    .next()
                    .unwrap_or((500, "{\"error\":\"mock exhausted\"}".into()));
                if let Some(req) = serve(stream, status, &body) {
                    seen.lock().unwrap_or_else(|e| e.into_inner()).push(req);
                }
            }
        });
        Ok(Self {
            url,
            requests,
            _handle: handle,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn requests(&self) -> Vec<MockRequest> {
        self.requests
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }
}

fn serve(stream: TcpStream, status: u16, body: &str) -> Option<MockRequest> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let target = parts.next()?.to_string();
    let mut headers = Vec::new();
    let mut length = 0usize;
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h).ok()? == 0 || h.trim().is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            let (k, v) = (k.trim().to_lowercase(), v.trim().to_string());
            if k == "content-length" {
                length = v.parse().unwrap_or(0);
            }
            headers.push((k, v));
        }
    }
    let mut buf = vec![0u8; length];
    reader.read_exact(&mut buf).ok()?;
    let reason = match status {
        200 => "OK",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    };
    let mut stream = stream;
    let reply = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(reply.as_bytes()).ok()?;
    stream.flush().ok()?;
    Some(MockRequest {
        method,
        target,
        headers,
        body: String::from_utf8_lossy(&buf).into_owned(),
    })
}
