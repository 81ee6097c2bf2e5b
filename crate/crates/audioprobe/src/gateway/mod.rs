//! Model access: a live chat-completions client, a replay store of
//! recorded responses, and a synthetic oracle for testing. All three
//! produce the same immutable `ModelResponse` shape, so everything
//! downstream is backend-agnostic.

mod http;
mod replay;
mod synthetic;

pub use http::{BackoffPolicy, HttpGateway};
pub use replay::{ReplayArchive, ReplayError};
pub use synthetic::{synthetic_answer, AnswerStyle, SyntheticError, SyntheticPolicy};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditions::{Condition, PromptBundle};

/// One reachable model endpoint speaking the chat-completions protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub model_id: String,
    pub base_url: String,
    /// Name of the environment variable holding the bearer token, if any.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_audio_capable")]
    pub audio_capable: bool,
    #[serde(default = "default_timeout_secs")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Per-model decode override (e.g. 0.6 for thinking-mode models);
    /// greedy temperature 0 otherwise.
    #[serde(default)]
    pub temperature_override: Option<f64>,
}

fn default_audio_capable() -> bool {
    true
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_max_retries() -> u32 {
    3
}

impl ModelEndpoint {
    pub fn new(model_id: impl Into<String>, base_url: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            base_url: base_url.into(),
            auth_env: None,
            audio_capable: true,
            request_timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            temperature_override: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    Live,
    Replay,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// A model's reply to one `(item, condition)` request. `raw_text` is kept
/// byte-exact; the condition echoes the request's condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub item_id: String,
    pub condition: Condition,
    pub model_id: String,
    pub raw_text: String,
    pub latency_ms: u64,
    #[serde(default)]
    pub token_usage: Option<TokenUsage>,
    /// Unix epoch milliseconds (UTC). Zero for synthetic responses so
    /// synthetic runs are bit-reproducible.
    pub created_at_ms: u64,
    pub transport: Transport,
    #[serde(default)]
    pub retries: u32,
}

/// Identity plus payload for one dispatched request.
#[derive(Debug, Clone)]
pub struct AuditRequest {
    pub item_id: String,
    pub condition: Condition,
    pub bundle: PromptBundle,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("endpoint '{model_id}' is not audio-capable but the request carries audio")]
    AudioNotSupported { model_id: String },
    #[error("auth environment variable '{env_var}' is not set")]
    AuthMissing { env_var: String },
    #[error("retries exhausted after {attempts} attempt(s), last status {last_status:?}")]
    ExhaustedRetries {
        last_status: Option<u16>,
        attempts: u32,
    },
    #[error("non-retryable HTTP status {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("malformed response: {message}")]
    MalformedResponse { message: String },
    #[error("audio file {path} could not be read: {message}")]
    AudioRead { path: String, message: String },
}
