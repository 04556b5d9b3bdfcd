//! OpenAI-compatible chat-completion client.

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, ChatResponse, FinishState, GatewayError, Role, Usage};

/// Environment variable holding the API credential. Never read from config
/// files or flags.
pub const API_KEY_ENV: &str = "SCG_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    /// Base URL up to and excluding `/chat/completions`.
    pub base_url: String,
    pub requests_per_minute: Option<u32>,
    pub request_timeout_s: u64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self { base_url: "https://api.openai.com/v1".into(), requests_per_minute: None, request_timeout_s: 300 }
    }
}

/// Spaces out dispatches so that at most `per_minute` start in any minute.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn per_minute(per_minute: u32) -> Self {
        let interval = Duration::from_secs(60) / per_minute.max(1);
        Self { interval, next: Mutex::new(None) }
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    /// Blocks until the caller may dispatch.
    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().unwrap();
            let now = Instant::now();
            let slot = match *next {
                Some(t) if t > now => t,
                _ => now,
            };
            *next = Some(slot + self.interval);
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

pub struct LiveBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
    limiter: Option<Arc<RateLimiter>>,
}

impl LiveBackend {
    /// Reads the credential from [`API_KEY_ENV`].
    pub fn from_env(config: &LiveConfig) -> Result<Self, GatewayError> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| GatewayError::MissingCredential)?;
        if key.trim().is_empty() {
            return Err(GatewayError::MissingCredential);
        }
        Self::with_api_key(config, key)
    }

    pub fn with_api_key(config: &LiveConfig, api_key: String) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.request_timeout_s))
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            api_key,
            limiter: config.requests_per_minute.map(|n| Arc::new(RateLimiter::per_minute(n))),
        })
    }

    fn body(request: &ChatRequest) -> Value {
        let mut messages: Vec<Value> = request
            .history
            .iter()
            .map(|t| {
                let role = match t.role {
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                json!({"role": role, "content": t.content})
            })
            .collect();
        messages.push(json!({"role": "user", "content": request.prompt_text}));
        json!({
            "model": request.model_id,
            "messages": messages,
            "temperature": request.sampling.temperature,
            "max_tokens": request.sampling.max_output_tokens,
        })
    }
}

/// Maps a chat-completions JSON reply onto [`ChatResponse`].
pub(crate) fn parse_reply(v: &Value) -> Result<ChatResponse, GatewayError> {
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| GatewayError::Protocol("reply has no choices".into()))?;
    let message = choice.get("message").ok_or_else(|| GatewayError::Protocol("choice has no message".into()))?;
    let text = message.get("content").and_then(Value::as_str).unwrap_or_default().to_string();
    let refusal = message.get("refusal").is_some_and(|r| !r.is_null());
    let finish_state = match choice.get("finish_reason").and_then(Value::as_str) {
        _ if refusal => FinishState::Refused,
        Some("length") => FinishState::Truncated,
        Some("content_filter") => FinishState::Refused,
        _ => FinishState::Complete,
    };
    let usage = v
        .get("usage")
        .map(|u| Usage {
            prompt_tokens: u.get("prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
            completion_tokens: u.get("completion_tokens").and_then(Value::as_u64).unwrap_or(0),
        })
        .unwrap_or_default();
    Ok(ChatResponse { text, finish_state, usage })
}

impl ChatBackend for LiveBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        if let Some(limiter) = &self.limiter {
            limiter.acquire();
        }
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&Self::body(request))
            .send()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| GatewayError::Transport(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(GatewayError::Auth(status)),
            _ => return Err(GatewayError::Status { status, body: body.chars().take(500).collect() }),
        }
        let v: Value = serde_json::from_str(&body).map_err(|e| GatewayError::Protocol(e.to_string()))?;
        parse_reply(&v)
    }
}
