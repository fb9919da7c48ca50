use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Exponential backoff: the n-th retry waits `backoff_base_ms * 2^(n-1)`,
/// capped at `max_backoff_ms`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base_ms: 500,
            max_backoff_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            backoff_base_ms: 0,
            max_backoff_ms: 0,
        }
    }

    pub fn delay_before_retry(&self, retry: u32) -> Duration {
        let factor = 1u64
            .checked_shl(retry.saturating_sub(1))
            .unwrap_or(u64::MAX);
        Duration::from_millis(
            self.backoff_base_ms
                .saturating_mul(factor)
                .min(self.max_backoff_ms),
        )
    }
}

pub enum AttemptError<E> {
    /// Worth retrying (timeouts, 429, 5xx).
    Transient(String),
    /// Retrying cannot help.
    Fatal(E),
}

pub enum RetryError<E> {
    Exhausted { attempts: u32, last_error: String },
    Fatal(E),
}

/// Runs `op` (called with the 1-based attempt number) until it succeeds,
/// fails fatally, or the policy runs out of attempts.
pub fn with_retry<T, E>(
    policy: &RetryPolicy,
    mut op: impl FnMut(u32) -> Result<T, AttemptError<E>>,
) -> Result<T, RetryError<E>> {
    let max = policy.max_attempts.max(1);
    let mut last_error = String::new();
    for attempt in 1..=max {
        if attempt > 1 {
            std::thread::sleep(policy.delay_before_retry(attempt - 1));
        }
        match op(attempt) {
            Ok(v) => return Ok(v),
            Err(AttemptError::Fatal(e)) => return Err(RetryError::Fatal(e)),
            Err(AttemptError::Transient(msg)) => {
                tracing::warn!(attempt, max, error = %msg, "transient backend failure");
                last_error = msg;
            }
        }
    }
    Err(RetryError::Exhausted {
        attempts: max,
        last_error,
    })
}
