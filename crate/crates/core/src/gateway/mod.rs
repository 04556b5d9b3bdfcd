//! Chat-completion gateway.
//!
//! Every stage of the workflow talks to the model through [`Gateway`],
//! which wraps a [`ChatBackend`] (live HTTP, cassette replay, recording, or
//! a scripted mock) and owns the retry budget for refused, truncated and
//! unparseable replies.

mod cassette;
mod live;
mod scripted;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::prompts::StageTag;

pub use cassette::{
    load_cassette, Cassette, CassetteEntry, CassetteError, CassetteMode, CassetteWriter, RecordingBackend,
    ReplayBackend,
};
pub use live::{LiveBackend, LiveConfig, RateLimiter, API_KEY_ENV};
pub use scripted::ScriptedBackend;

/// Retries after the first attempt for refused, truncated or unparseable replies.
pub const DEFAULT_RETRIES: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishState {
    Complete,
    Truncated,
    Refused,
}

impl fmt::Display for FinishState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FinishState::Complete => "complete",
            FinishState::Truncated => "truncated",
            FinishState::Refused => "refused",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

/// One prior message in a threaded conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

/// Sampling defaults per stage kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub generation_temperature: f64,
    pub decision_temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { generation_temperature: 0.7, decision_temperature: 0.0, max_output_tokens: 4096 }
    }
}

impl SamplingConfig {
    pub fn for_stage(&self, stage: StageTag) -> Sampling {
        let temperature = if stage.is_decision() { self.decision_temperature } else { self.generation_temperature };
        Sampling { temperature, max_output_tokens: self.max_output_tokens }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub stage: StageTag,
    pub prompt_text: String,
    /// Earlier turns of the same conversation; empty for single-turn stages.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<Turn>,
    pub sampling: Sampling,
    pub model_id: String,
}

impl ChatRequest {
    pub fn digest(&self) -> String {
        prompt_digest(self.stage, &self.prompt_text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub finish_state: FinishState,
    #[serde(default)]
    pub usage: Usage,
}

impl ChatResponse {
    pub fn complete(text: impl Into<String>) -> Self {
        Self { text: text.into(), finish_state: FinishState::Complete, usage: Usage::default() }
    }
}

/// Hex SHA-256 over the stage tag and prompt text. Sampling parameters and
/// conversation history are deliberately not covered.
pub fn prompt_digest(stage: StageTag, prompt_text: &str) -> String {
    let mut h = Sha256::new();
    h.update(stage.as_str().as_bytes());
    h.update(b"\n");
    h.update(prompt_text.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend reply: {0}")]
    Protocol(String),
    #[error("{API_KEY_ENV} is not set")]
    MissingCredential,
    #[error("cassette exhausted after {consumed} exchanges")]
    CassetteExhausted { consumed: usize },
    #[error("cassette entry {seq} was recorded for {recorded_stage} with digest {expected}, request is {stage} with digest {actual}")]
    DigestMismatch { seq: usize, recorded_stage: String, stage: StageTag, expected: String, actual: String },
    #[error("no unconsumed cassette entry for {stage} digest {digest}")]
    NotInCassette { stage: StageTag, digest: String },
    #[error(transparent)]
    Cassette(#[from] CassetteError),
    #[error("{stage}: reply {finish_state} after {attempts} attempts")]
    Incomplete { stage: StageTag, finish_state: FinishState, attempts: u32 },
    #[error("{stage}: reply unusable after {attempts} attempts: {reason}")]
    Unparseable { stage: StageTag, attempts: u32, reason: String },
}

impl GatewayError {
    /// True for failures of the model's reply rather than of the
    /// infrastructure; callers may degrade instead of aborting.
    pub fn is_soft(&self) -> bool {
        matches!(self, GatewayError::Incomplete { .. } | GatewayError::Unparseable { .. })
    }
}

/// A chat-completion provider.
pub trait ChatBackend: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// One request/response pair, reported to the caller for its transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct Exchange<'a> {
    pub request: &'a ChatRequest,
    pub response: &'a ChatResponse,
    pub attempt: u32,
}

#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    model_id: String,
    sampling: SamplingConfig,
    retries: u32,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").field("model_id", &self.model_id).field("retries", &self.retries).finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, model_id: impl Into<String>) -> Self {
        Self { backend, model_id: model_id.into(), sampling: SamplingConfig::default(), retries: DEFAULT_RETRIES }
    }

    pub fn with_sampling(mut self, sampling: SamplingConfig) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn retries(&self) -> u32 {
        self.retries
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn request(&self, stage: StageTag, prompt_text: String, history: Vec<Turn>) -> ChatRequest {
        ChatRequest {
            stage,
            prompt_text,
            history,
            sampling: self.sampling.for_stage(stage),
            model_id: self.model_id.clone(),
        }
    }

    /// Sends `request` until a complete reply arrives or the retry budget
    /// is spent.
    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.complete_with(request, |r| Ok::<_, std::convert::Infallible>(r.clone()), &mut |_| {})
    }

    /// Sends `request` and parses the reply, retrying on refused, truncated
    /// or unparseable replies. Every exchange, including discarded ones, is
    /// passed to `observe` in order.
    pub fn complete_with<T, E: fmt::Display>(
        &self,
        request: &ChatRequest,
        mut parse: impl FnMut(&ChatResponse) -> Result<T, E>,
        observe: &mut dyn FnMut(Exchange<'_>),
    ) -> Result<T, GatewayError> {
        let attempts = self.retries + 1;
        let mut last_soft = None;
        for attempt in 1..=attempts {
            let response = self.backend.send(request)?;
            observe(Exchange { request, response: &response, attempt });
            if response.finish_state != FinishState::Complete {
                tracing::warn!(stage = %request.stage, state = %response.finish_state, attempt, "incomplete reply");
                last_soft = Some(GatewayError::Incomplete {
                    stage: request.stage,
                    finish_state: response.finish_state,
                    attempts: attempt,
                });
                continue;
            }
            match parse(&response) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    tracing::warn!(stage = %request.stage, attempt, error = %e, "unparseable reply");
                    last_soft = Some(GatewayError::Unparseable {
                        stage: request.stage,
                        attempts: attempt,
                        reason: e.to_string(),
                    });
                }
            }
        }
        Err(last_soft.expect("at least one attempt"))
    }
}
