use std::sync::Arc;
use std::time::Duration;

use reqwest::blocking::Client;
use serde_json::{json, Map, Value};

use super::retry::{with_retry, AttemptError, RetryError};
use super::{
    BackendConfig, ChatBackend, ChatMessage, ChatRequest, ChatResponse, EmbeddingBackend,
    FinishReason, GatewayError, ToolCall, TraceEvent, TraceLog,
};

fn build_client(cfg: &BackendConfig) -> Result<Client, GatewayError> {
    cfg.validate()?;
    Client::builder()
        .timeout(Duration::from_secs(cfg.timeout_secs.max(1)))
        .build()
        .map_err(|e| GatewayError::Config(format!("cannot build HTTP client: {e}")))
}

fn wire_name(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .take(64)
        .collect()
}

fn wire_message(m: &ChatMessage) -> Value {
    let mut obj = Map::new();
    obj.insert("role".into(), json!(m.role.as_str()));
    obj.insert("content".into(), json!(m.content));
    if let Some(name) = &m.name {
        obj.insert("name".into(), json!(wire_name(name)));
    }
    if !m.tool_calls.is_empty() {
        let calls: Vec<Value> = m
            .tool_calls
            .iter()
            .map(|c| {
                json!({
                    "id": c.id,
                    "type": "function",
                    "function": { "name": c.name, "arguments": Value::Object(c.arguments.clone()).to_string() }
                })
            })
            .collect();
        obj.insert("tool_calls".into(), Value::Array(calls));
    }
    if let Some(id) = &m.tool_call_id {
        obj.insert("tool_call_id".into(), json!(id));
    }
    Value::Object(obj)
}

/// Request body in the OpenAI chat-completions wire shape.
pub(crate) fn chat_body(req: &ChatRequest, default_model: &str) -> Value {
    let model = if req.model.is_empty() {
        default_model
    } else {
        &req.model
    };
    let mut body = json!({
        "model": model,
        "messages": req.messages.iter().map(wire_message).collect::<Vec<_>>(),
        "temperature": req.temperature,
        "max_tokens": req.max_output_tokens,
    });
    if !req.tools.is_empty() {
        body["tools"] = req
            .tools
            .iter()
            .map(|t| {
                json!({
                    "type": "function",
                    "function": {
                        "name": t.name,
                        "description": t.description,
                        "parameters": t.parameters_schema(),
                    }
                })
            })
            .collect();
    }
    body
}

fn protocol(message: impl Into<String>, raw: &str) -> GatewayError {
    GatewayError::Protocol {
        message: message.into(),
        raw_body: raw.to_string(),
    }
}

/// Parses a chat-completions response body.
pub(crate) fn parse_chat_response(raw: &str) -> Result<ChatResponse, GatewayError> {
    let v: Value =
        serde_json::from_str(raw).map_err(|e| protocol(format!("invalid JSON: {e}"), raw))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| protocol("response has no choices", raw))?;
    let msg = choice
        .get("message")
        .ok_or_else(|| protocol("choice has no message", raw))?;
    let content = msg
        .get("content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();

    let mut tool_calls = Vec::new();
    if let Some(calls) = msg.get("tool_calls").and_then(Value::as_array) {
        for (i, c) in calls.iter().enumerate() {
            let f = c
                .get("function")
                .ok_or_else(|| protocol("tool call without function", raw))?;
            let name = f
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| protocol("tool call without name", raw))?;
            let args_text = f.get("arguments").and_then(Value::as_str).unwrap_or("{}");
            let arguments = match serde_json::from_str::<Value>(args_text) {
                Ok(Value::Object(m)) => m,
                _ => {
                    return Err(protocol(
                        format!("arguments of `{name}` are not a JSON object"),
                        raw,
                    ))
                }
            };
            let id = c
                .get("id")
                .and_then(Value::as_str)
                .map(str::to_string)
                .unwrap_or_else(|| format!("call_{i}"));
            tool_calls.push(ToolCall {
                id,
                name: name.to_string(),
                arguments,
            });
        }
    }

    let finish_reason = if !tool_calls.is_empty() {
        FinishReason::ToolCall
    } else {
        match choice.get("finish_reason").and_then(Value::as_str) {
            Some("length") => FinishReason::Length,
            Some("stop") | None => FinishReason::Stop,
            Some("tool_calls") | Some("function_call") => FinishReason::Stop,
            Some(_) => FinishReason::Error,
        }
    };
    Ok(ChatResponse {
        content,
        tool_calls,
        finish_reason,
    })
}

fn post_json(
    client: &Client,
    url: &str,
    api_key: Option<&str>,
    body: &Value,
    cfg: &BackendConfig,
    trace: Option<&TraceLog>,
) -> Result<String, GatewayError> {
    let outcome = with_retry(&cfg.retry, |attempt| {
        let mut rb = client.post(url).json(body);
        if let Some(key) = api_key {
            rb = rb.bearer_auth(key);
        }
        let (status, result) = match rb.send() {
            Err(e) => (None, Err(AttemptError::Transient(e.to_string()))),
            Ok(resp) => {
                let status = resp.status();
                let text = resp.text().unwrap_or_default();
                let r = if status.is_success() {
                    Ok(text)
                } else if status.as_u16() == 429 || status.is_server_error() {
                    Err(AttemptError::Transient(format!("HTTP {status}")))
                } else {
                    Err(AttemptError::Fatal(protocol(
                        format!("HTTP {status}"),
                        &text,
                    )))
                };
                (Some(status.as_u16()), r)
            }
        };
        if let Some(t) = trace {
            t.append(TraceEvent::Attempt {
                attempt,
                url: url.to_string(),
                status,
                error: match &result {
                    Err(AttemptError::Transient(m)) => Some(m.clone()),
                    Err(AttemptError::Fatal(e)) => Some(e.to_string()),
                    Ok(_) => None,
                },
            });
        }
        result
    });
    outcome.map_err(|e| match e {
        RetryError::Exhausted {
            attempts,
            last_error,
        } => GatewayError::BackendUnavailable {
            attempts,
            last_error,
        },
        RetryError::Fatal(e) => e,
    })
}

/// OpenAI-compatible chat-completions client with retries.
pub struct HttpChatBackend {
    client: Client,
    config: BackendConfig,
    api_key: Option<String>,
    trace: Option<Arc<TraceLog>>,
}

impl HttpChatBackend {
    pub fn new(config: BackendConfig) -> Result<Self, GatewayError> {
        let client = build_client(&config)?;
        let api_key = config.api_key();
        Ok(Self {
            client,
            config,
            api_key,
            trace: None,
        })
    }

    /// Records every HTTP attempt in `trace`.
    pub fn with_trace(mut self, trace: Arc<TraceLog>) -> Self {
        self.trace = Some(trace);
        self
    }

    fn url(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.endpoint.trim_end_matches('/')
        )
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let body = chat_body(req, &self.config.model);
        let raw = post_json(
            &self.client,
            &self.url(),
            self.api_key.as_deref(),
            &body,
            &self.config,
            self.trace.as_deref(),
        )?;
        parse_chat_response(&raw)
    }
}

/// OpenAI-compatible embeddings client with retries.
pub struct HttpEmbeddingBackend {
    client: Client,
    config: BackendConfig,
    api_key: Option<String>,
    trace: Option<Arc<TraceLog>>,
}

impl HttpEmbeddingBackend {
    pub fn new(config: BackendConfig) -> Result<Self, GatewayError> {
        let client = build_client(&config)?;
        let api_key = config.api_key();
        Ok(Self {
            client,
            config,
            api_key,
            trace: None,
        })
    }

    pub fn with_trace(mut self, trace: Arc<TraceLog>) -> Self {
        self.trace = Some(trace);
        self
    }
}

pub(crate) fn parse_embeddings(raw: &str, expected: usize) -> Result<Vec<Vec<f32>>, GatewayError> {
    let v: Value =
        serde_json::from_str(raw).map_err(|e| protocol(format!("invalid JSON: {e}"), raw))?;
    let data = v
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| protocol("response has no data array", raw))?;
    let mut slots: Vec<Option<Vec<f32>>> = vec![None; expected];
    for (pos, item) in data.iter().enumerate() {
        let idx = item
            .get("index")
            .and_then(Value::as_u64)
            .map(|i| i as usize)
            .unwrap_or(pos);
        let vec: Vec<f32> = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| protocol("data item has no embedding", raw))?
            .iter()
            .map(|x| x.as_f64().map(|f| f as f32))
            .collect::<Option<_>>()
            .ok_or_else(|| protocol("embedding contains a non-number", raw))?;
        match slots.get_mut(idx) {
            Some(slot) if slot.is_none() => *slot = Some(vec),
            _ => return Err(protocol(format!("unexpected embedding index {idx}"), raw)),
        }
    }
    slots
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| protocol(format!("expected {expected} embeddings"), raw))
}

impl EmbeddingBackend for HttpEmbeddingBackend {
    fn model_tag(&self) -> &str {
        &self.config.model
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        let url = format!("{}/embeddings", self.config.endpoint.trim_end_matches('/'));
        let body = json!({ "model": self.config.model, "input": texts });
        let raw = post_json(
            &self.client,
            &url,
            self.api_key.as_deref(),
            &body,
            &self.config,
            self.trace.as_deref(),
        )?;
        parse_embeddings(&raw, texts.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ToolParameter, ToolSchema};

    #[test]
    fn body_carries_tools_and_names() {
        let mut req = ChatRequest::new(vec![
            ChatMessage::system("sys"),
            ChatMessage::user("hi").named("scientist 1"),
        ]);
        req.tools.push(ToolSchema {
            name: "generate_path".into(),
            description: "d".into(),
            parameters: vec![ToolParameter {
                name: "keyword_1".into(),
                kind: "string".into(),
                description: "k".into(),
                required: true,
            }],
        });
        let b = chat_body(&req, "m");
        assert_eq!(b["model"], "m");
        assert_eq!(b["messages"][1]["name"], "scientist_1");
        assert_eq!(b["tools"][0]["function"]["name"], "generate_path");
    }

    #[test]
    fn parses_tool_calls() {
        let raw = r#"{"choices":[{"message":{"content":null,"tool_calls":[{"id":"c1","type":"function",
            "function":{"name":"generate_path","arguments":"{\"keyword_1\":\"silk\"}"}}]},"finish_reason":"tool_calls"}]}"#;
        let r = parse_chat_response(raw).unwrap();
        assert_eq!(r.finish_reason, FinishReason::ToolCall);
        assert_eq!(r.tool_calls[0].arguments["keyword_1"], "silk");
        assert!(
            matches!(parse_chat_response("nope"), Err(GatewayError::Protocol { raw_body, .. }) if raw_body == "nope")
        );
    }

    #[test]
    fn embeddings_are_reordered_by_index() {
        let raw = r#"{"data":[{"index":1,"embedding":[0,1]},{"index":0,"embedding":[1,0]}]}"#;
        let v = parse_embeddings(raw, 2).unwrap();
        assert_eq!(v[0], vec![1.0, 0.0]);
        assert!(parse_embeddings(raw, 3).is_err());
    }
}
