//! Pluggable chat backends.
//!
//! Three implementations of [`ChatTransport`]: a live HTTP client for
//! generic chat-completions endpoints ([`live::LiveTransport`]), a scripted
//! mock for deterministic tests ([`mock::MockTransport`]), and a replay
//! adapter that serves recorded model turns ([`replay::ReplayTransport`]).

pub mod live;
pub mod mock;
pub mod replay;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelTarget, Role};

pub use mock::{MockRule, MockScript, MockTransport};
pub use replay::{make_replay, ReplayTransport};

/// Default environment variable holding the API key.
pub const DEFAULT_AUTH_ENV: &str = "VC_HARNESS_API_KEY";

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("configuration error: auth env var {var} is not set")]
    MissingAuth { var: String },
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("endpoint returned non-retryable status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("retries exhausted after {attempts} attempts; last failure: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("network failure: {0}")]
    Network(String),
    #[error("malformed endpoint response: {0}")]
    MalformedResponse(String),
    #[error("replay exhausted for session {session_id}")]
    ReplayExhausted { session_id: String },
    #[error("transcript {session_id} has no model turns to replay")]
    NoModelTurns { session_id: String },
    #[error("no mock rule matches prompt: {preview:?}")]
    NoMockRule { preview: String },
    #[error("{transport} transport is sequential; concurrent send detected")]
    ConcurrentUse { transport: &'static str },
}

/// One message in a chat request, in session order.
#[derive(Debug, Clone)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

impl ChatMessage {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        ChatMessage {
            role,
            text: text.into(),
        }
    }
}

/// A single chat exchange: full context so far plus the model target.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub model: ModelTarget,
    pub messages: Vec<ChatMessage>,
    /// Left unset by default so the endpoint keeps its platform default.
    pub max_output_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn new(model: ModelTarget, messages: Vec<ChatMessage>) -> Self {
        ChatRequest {
            model,
            messages,
            max_output_tokens: None,
        }
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        if self.messages.is_empty() {
            return Err(TransportError::InvalidRequest(
                "messages must be non-empty".into(),
            ));
        }
        let last = self.messages.last().expect("non-empty");
        if last.role == Role::Model {
            return Err(TransportError::InvalidRequest(
                "last message role must be operator or system".into(),
            ));
        }
        if let Some(0) = self.max_output_tokens {
            return Err(TransportError::InvalidRequest(
                "max_output_tokens must be positive".into(),
            ));
        }
        self.model
            .validate()
            .map_err(|e| TransportError::InvalidRequest(e.to_string()))
    }

    /// Text of the newest operator/system message; what mock rules match on.
    pub fn last_text(&self) -> &str {
        self.messages.last().map(|m| m.text.as_str()).unwrap_or("")
    }
}

fn default_auth_source() -> String {
    DEFAULT_AUTH_ENV.to_string()
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_max_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    500
}

fn default_rate_limit() -> u32 {
    30
}

/// Settings for the live backend. API keys come exclusively from the
/// environment variable named by `auth_source`, never from this struct,
/// so config files stay shareable.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TransportConfig {
    #[serde(default)]
    pub endpoint_url: String,
    #[serde(default = "default_auth_source")]
    pub auth_source: String,
    #[serde(default = "default_timeout_secs")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
    /// Client-side token-bucket limit; 0 disables rate limiting.
    #[serde(default = "default_rate_limit")]
    pub rate_limit_per_minute: u32,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            endpoint_url: String::new(),
            auth_source: default_auth_source(),
            request_timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            retry_backoff_ms: default_backoff_ms(),
            rate_limit_per_minute: default_rate_limit(),
        }
    }
}

impl TransportConfig {
    pub fn validate(&self) -> Result<(), TransportError> {
        if self.request_timeout_secs == 0 {
            return Err(TransportError::Config("request timeout must be > 0".into()));
        }
        if self.max_retries > 10 {
            return Err(TransportError::Config(format!(
                "max_retries must be <= 10, got {}",
                self.max_retries
            )));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.request_timeout_secs)
    }

    pub fn backoff_base(&self) -> Duration {
        Duration::from_millis(self.retry_backoff_ms)
    }
}

/// A chat backend. One call, one assistant reply.
///
/// Implementations must be shareable across threads; backends that are
/// sequential by construction (mock, replay) return
/// [`TransportError::ConcurrentUse`] instead of corrupting state.
pub trait ChatTransport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

/// Exponential backoff: `base * 2^attempt`, capped at 60 s. Non-decreasing
/// in `attempt` for a fixed base.
pub fn backoff_delay(base: Duration, attempt: u32) -> Duration {
    const CAP: Duration = Duration::from_secs(60);
    base.saturating_mul(2u32.saturating_pow(attempt)).min(CAP)
}
