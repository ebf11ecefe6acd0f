//! Chat-completion engines.
//!
//! An [`Engine`] pairs an [`EngineConfig`] with a [`Transport`]. The engine
//! owns everything vendor-neutral: retries, the per-endpoint concurrency
//! bound, reasoning on/off handling and the canonical `open + trace + close +
//! final` shape of completions. Transports only move a [`ChatRequest`] to a
//! backend and bring a [`Completion`] back.

mod codec;
mod fixture;
mod http;
mod replay;
mod stub;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::warn;

pub use codec::{decode_thinking, encode_thinking, ThinkingDelimiters};
pub use fixture::FixtureTranslator;
pub use http::HttpTransport;
pub use replay::ReplayTransport;
pub use stub::StubTransport;

#[derive(Debug, Clone, thiserror::Error)]
pub enum EngineError {
    /// Retry budget exhausted on transient failures.
    #[error("transport error from {endpoint} after {attempts} attempt(s): {message}")]
    Transport {
        endpoint: String,
        attempts: u32,
        message: String,
    },
    /// A transient failure (connection refused, 429, 5xx). Retried by the engine.
    #[error("{endpoint} unavailable: {message}")]
    Unavailable { endpoint: String, message: String },
    #[error("protocol error from {endpoint}: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("{endpoint} does not support {capability}")]
    Unsupported {
        endpoint: String,
        capability: &'static str,
    },
    #[error("invalid thinking delimiters: {0}")]
    InvalidDelimiters(String),
    #[error("invalid reasoning trace: {0}")]
    InvalidTrace(String),
    #[error("replay store has no completion for request {key}")]
    ReplayMiss { key: String },
    #[error("engine configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Decoded completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineOutput {
    pub trace: String,
    #[serde(rename = "final")]
    pub final_text: String,
    pub raw: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// First backoff; doubles after every failed attempt.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            backoff_ms: 1000,
        }
    }
}

fn default_max_tokens() -> u32 {
    8192
}

fn default_true() -> bool {
    true
}

fn default_concurrency() -> usize {
    4
}

/// How to reach a model and how to talk to it.
///
/// `endpoint` selects the backend: an `http(s)://` URL for an
/// OpenAI-compatible chat-completions server, `fixture:` for the offline
/// [`FixtureTranslator`], or `replay:` for a replay-only store (requires
/// `replay_dir`). With `replay_dir` set on a live endpoint, completions are
/// recorded on first use and served from disk afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub name: String,
    pub endpoint: String,
    pub model_name: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub delimiters: ThinkingDelimiters,
    #[serde(default = "default_true")]
    pub reasoning_enabled: bool,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    /// Whether the backend continues an assistant turn seeded by the client.
    #[serde(default = "default_true")]
    pub supports_prefill: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_dir: Option<PathBuf>,
}

impl EngineConfig {
    /// Minimal config with defaults for everything but the identity fields.
    pub fn new(name: impl Into<String>, endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        EngineConfig {
            name: name.into(),
            endpoint: endpoint.into(),
            model_name: model.into(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            delimiters: ThinkingDelimiters::default(),
            reasoning_enabled: true,
            auth_env: None,
            retry: RetryPolicy::default(),
            max_concurrency: default_concurrency(),
            supports_prefill: true,
            replay_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.delimiters.validate()?;
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(EngineError::Config(format!(
                "{}: temperature must be a non-negative number",
                self.name
            )));
        }
        if self.max_tokens == 0 {
            return Err(EngineError::Config(format!("{}: max_tokens must be positive", self.name)));
        }
        if self.retry.attempts == 0 {
            return Err(EngineError::Config(format!("{}: retry.attempts must be positive", self.name)));
        }
        if self.max_concurrency == 0 {
            return Err(EngineError::Config(format!("{}: max_concurrency must be positive", self.name)));
        }
        Ok(())
    }

    /// Hash of the settings that change what the model is asked to do.
    /// Endpoint and credentials are excluded so recorded completions stay
    /// valid when a deployment moves.
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Fp<'a> {
            model: &'a str,
            temperature: f64,
            max_tokens: u32,
            delimiters: &'a ThinkingDelimiters,
            reasoning_enabled: bool,
        }
        crate::digest::json_hash(&Fp {
            model: &self.model_name,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            delimiters: &self.delimiters,
            reasoning_enabled: self.reasoning_enabled,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningFlag {
    pub enabled: bool,
}

/// Wire-level chat-completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub reasoning: ReasoningFlag,
}

impl ChatRequest {
    /// Replay-store key.
    pub fn key(&self) -> String {
        crate::digest::json_hash(self)
    }

    /// The seeded assistant turn, when the request ends with one.
    pub fn prefill(&self) -> Option<&str> {
        match self.messages.last() {
            Some(m) if m.role == Role::Assistant => Some(&m.content),
            _ => None,
        }
    }
}

/// Raw completion as returned by a backend. Some vendors return the
/// reasoning channel in a separate field; the engine folds it back into
/// delimiter form.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Completion {
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
}

impl Completion {
    pub fn text(content: impl Into<String>) -> Self {
        Completion {
            content: content.into(),
            reasoning: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub reasoning: bool,
    pub prefill: bool,
}

/// Moves one request to a backend. Implementations must be safe to share
/// across worker threads.
pub trait Transport: Send + Sync {
    /// Human-readable endpoint used in error messages.
    fn endpoint(&self) -> &str;
    fn capabilities(&self) -> Capabilities;
    fn send(&self, request: &ChatRequest) -> Result<Completion, EngineError>;
}

struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Permits {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// A configured model client. Cheap to clone; clones share the transport,
/// the concurrency permits and the request counter.
#[derive(Clone)]
pub struct Engine {
    config: EngineConfig,
    transport: Arc<dyn Transport>,
    permits: Arc<Permits>,
    sent: Arc<AtomicU64>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("name", &self.config.name)
            .field("endpoint", &self.transport.endpoint())
            .finish()
    }
}

impl Engine {
    pub fn new(config: EngineConfig, transport: Arc<dyn Transport>) -> Result<Self, EngineError> {
        config.validate()?;
        let permits = Arc::new(Permits::new(config.max_concurrency));
        Ok(Engine {
            config,
            transport,
            permits,
            sent: Arc::new(AtomicU64::new(0)),
        })
    }

    /// Builds the transport named by `config.endpoint`.
    pub fn from_config(config: EngineConfig) -> Result<Self, EngineError> {
        let endpoint = config.endpoint.as_str();
        let live: Option<Arc<dyn Transport>> = if endpoint.starts_with("http://") || endpoint.starts_with("https://") {
            Some(Arc::new(HttpTransport::new(&config)?))
        } else if endpoint == "fixture:" || endpoint == "fixture" {
            Some(Arc::new(FixtureTranslator::new(config.delimiters.clone())))
        } else if endpoint == "replay:" || endpoint == "replay" {
            None
        } else {
            return Err(EngineError::Config(format!(
                "{}: unrecognised endpoint {endpoint:?} (expected http(s)://, fixture: or replay:)",
                config.name
            )));
        };
        let transport: Arc<dyn Transport> = match (&config.replay_dir, live) {
            (Some(dir), inner) => Arc::new(ReplayTransport::open(dir, inner)?),
            (None, Some(t)) => t,
            (None, None) => {
                return Err(EngineError::Config(format!(
                    "{}: replay endpoint needs replay_dir",
                    config.name
                )))
            }
        };
        Engine::new(config, transport)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn capabilities(&self) -> Capabilities {
        let mut caps = self.transport.capabilities();
        caps.prefill &= self.config.supports_prefill;
        caps
    }

    /// Same engine with reasoning switched on or off. Shares the transport.
    pub fn with_reasoning(&self, enabled: bool) -> Engine {
        let mut e = self.clone();
        e.config.reasoning_enabled = enabled;
        e
    }

    /// Number of requests handed to the transport so far (all clones).
    pub fn requests_sent(&self) -> u64 {
        self.sent.load(Ordering::Relaxed)
    }

    pub fn build_request(&self, messages: &[ChatMessage]) -> ChatRequest {
        ChatRequest {
            model: self.config.model_name.clone(),
            messages: messages.to_vec(),
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
            reasoning: ReasoningFlag {
                enabled: self.config.reasoning_enabled,
            },
        }
    }

    fn dispatch(&self, request: &ChatRequest) -> Result<Completion, EngineError> {
        let policy = self.config.retry;
        let mut last = String::new();
        for attempt in 1..=policy.attempts {
            let result = {
                let _permit = self.permits.acquire();
                self.sent.fetch_add(1, Ordering::Relaxed);
                self.transport.send(request)
            };
            match result {
                Err(EngineError::Unavailable { message, .. }) => {
                    warn!(engine = %self.config.name, attempt, %message, "transient engine failure");
                    last = message;
                    if attempt < policy.attempts {
                        let wait = policy.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                        std::thread::sleep(Duration::from_millis(wait));
                    }
                }
                other => return other,
            }
        }
        Err(EngineError::Transport {
            endpoint: self.transport.endpoint().to_owned(),
            attempts: policy.attempts,
            message: last,
        })
    }

    /// Sends `messages` and decodes the completion.
    ///
    /// With reasoning disabled any returned trace is stripped, leaving
    /// `trace` empty and `raw` equal to the final text.
    pub fn complete(&self, messages: &[ChatMessage]) -> Result<EngineOutput, EngineError> {
        let completion = self.dispatch(&self.build_request(messages))?;
        let d = &self.config.delimiters;
        let raw = canonical_raw(completion, d);
        let (trace, final_text) = decode_thinking(&raw, d);
        if self.config.reasoning_enabled {
            Ok(EngineOutput {
                trace,
                final_text,
                raw,
            })
        } else {
            Ok(EngineOutput {
                trace: String::new(),
                raw: final_text.clone(),
                final_text,
            })
        }
    }

    /// Seeds the assistant turn with `open + trace + close` so the backend
    /// only produces the final answer conditioned on the given trace.
    pub fn complete_with_injected_trace(
        &self,
        messages: &[ChatMessage],
        trace: &str,
    ) -> Result<EngineOutput, EngineError> {
        let d = &self.config.delimiters;
        let prefill = encode_thinking(trace, "", d)?;
        if !self.config.reasoning_enabled {
            return Err(EngineError::Unsupported {
                endpoint: self.transport.endpoint().to_owned(),
                capability: "trace injection with reasoning disabled",
            });
        }
        if !self.capabilities().prefill {
            return Err(EngineError::Unsupported {
                endpoint: self.transport.endpoint().to_owned(),
                capability: "assistant prefill",
            });
        }
        let mut msgs = messages.to_vec();
        msgs.push(ChatMessage::assistant(prefill.clone()));
        let completion = self.dispatch(&self.build_request(&msgs))?;
        // backends either echo the seeded prefix or return only the continuation
        let content = completion.content;
        let final_text = content
            .strip_prefix(prefill.as_str())
            .map(str::to_owned)
            .unwrap_or(content);
        Ok(EngineOutput {
            trace: trace.to_owned(),
            raw: format!("{prefill}{final_text}"),
            final_text,
        })
    }
}

/// Folds a completion into one delimiter-encoded string.
fn canonical_raw(c: Completion, d: &ThinkingDelimiters) -> String {
    let trimmed = c.content.trim_start();
    if trimmed.starts_with(d.open.as_str()) {
        return trimmed.to_owned();
    }
    match c.reasoning {
        Some(r) if !r.is_empty() => format!("{}{}{}{}", d.open, r, d.close, c.content),
        _ => c.content,
    }
}
