use std::collections::VecDeque;
use std::sync::Mutex;

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError};

/// Deterministic stand-in for a language model: serves a fixed queue of
/// responses in order and records every request it receives.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    state: Mutex<ScriptState>,
}

#[derive(Debug, Default)]
struct ScriptState {
    queue: VecDeque<ChatResponse>,
    requests: Vec<ChatRequest>,
    served: usize,
}

impl ScriptedBackend {
    pub fn new<I, R>(responses: I) -> Self
    where
        I: IntoIterator<Item = R>,
        R: Into<ChatResponse>,
    {
        Self {
            state: Mutex::new(ScriptState {
                queue: responses.into_iter().map(Into::into).collect(),
                ..Default::default()
            }),
        }
    }

    pub fn push(&self, response: impl Into<ChatResponse>) {
        self.state.lock().unwrap().queue.push_back(response.into());
    }

    /// Every request received so far, in arrival order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.state.lock().unwrap().requests.clone()
    }

    pub fn remaining(&self) -> usize {
        self.state.lock().unwrap().queue.len()
    }

    pub fn served(&self) -> usize {
        self.state.lock().unwrap().served
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let mut st = self.state.lock().unwrap();
        st.requests.push(req.clone());
        match st.queue.pop_front() {
            Some(r) => {
                st.served += 1;
                Ok(r)
            }
            None => Err(GatewayError::ScriptedExhausted { served: st.served }),
        }
    }
}
