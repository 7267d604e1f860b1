//! Chat-completion gateway: one interface over remote providers and a
//! deterministic scripted mock.
//!
//! Remote requests honor a shared requests-per-minute cap and a bounded
//! in-flight count, and retry transient failures with exponential backoff.
//! Credentials are referenced by environment-variable name only; the secret
//! value is read at request time and never stored, serialized, or embedded
//! in error messages.

pub mod mock;
pub mod rate;
pub mod remote;
pub mod template;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use mock::{MockClient, MockScript};
use rate::{Clock, InFlightGate, RateLimiter, SystemClock};
use remote::RemoteClient;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Remote,
}

/// Which provider wire format a remote endpoint speaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WireDialect {
    /// Flat `messages` array with string contents; bearer-token auth.
    #[default]
    Messages,
    /// Content-block messages with a separate system field; API-key header auth.
    ContentBlocks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub backend: BackendKind,
    #[serde(default)]
    pub dialect: WireDialect,
    #[serde(default)]
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API credential.
    #[serde(default)]
    pub credential_env: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_rpm")]
    pub requests_per_minute: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Base backoff delay; retry n sleeps `backoff_ms << n`.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_max_retries() -> u32 {
    3
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_rpm() -> u32 {
    300
}
fn default_in_flight() -> usize {
    4
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_max_tokens() -> u32 {
    4096
}

impl LlmConfig {
    pub fn mock(model: &str) -> Self {
        LlmConfig {
            backend: BackendKind::Mock,
            dialect: WireDialect::Messages,
            endpoint: String::new(),
            model: model.to_string(),
            credential_env: String::new(),
            temperature: 0.0,
            max_retries: default_max_retries(),
            timeout_secs: default_timeout_secs(),
            requests_per_minute: 6000,
            max_in_flight: default_in_flight(),
            backoff_ms: default_backoff_ms(),
            max_tokens: default_max_tokens(),
        }
    }

    pub fn check(&self) -> Result<(), LlmError> {
        if self.requests_per_minute == 0 {
            return Err(LlmError::BadConfig("requests_per_minute must be > 0".into()));
        }
        if self.backend == BackendKind::Remote && self.endpoint.is_empty() {
            return Err(LlmError::BadConfig("remote backend requires an endpoint".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurnMessage {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurnRequest {
    pub messages: Vec<ChatTurnMessage>,
}

impl ChatTurnRequest {
    pub fn new(messages: Vec<ChatTurnMessage>) -> Self {
        ChatTurnRequest { messages }
    }

    /// Single user message.
    pub fn user(text: impl Into<String>) -> Self {
        ChatTurnRequest {
            messages: vec![ChatTurnMessage {
                role: Role::User,
                text: text.into(),
            }],
        }
    }

    /// System preamble plus one user message.
    pub fn system_user(system: impl Into<String>, user: impl Into<String>) -> Self {
        ChatTurnRequest {
            messages: vec![
                ChatTurnMessage {
                    role: Role::System,
                    text: system.into(),
                },
                ChatTurnMessage {
                    role: Role::User,
                    text: user.into(),
                },
            ],
        }
    }

    pub fn check(&self) -> Result<(), LlmError> {
        match self.messages.first() {
            None => Err(LlmError::BadRequest("request has no messages".into())),
            Some(first) if first.role == Role::Assistant => Err(LlmError::BadRequest(
                "first message must be system or user".into(),
            )),
            Some(_) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    /// Transient failures absorbed before this response succeeded.
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurnResponse {
    pub text: String,
    pub model: String,
    pub usage: Usage,
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("missing template variable {0}")]
    MissingVariable(String),
    #[error("unknown placeholder {0}")]
    UnknownPlaceholder(String),
    #[error("invalid llm config: {0}")]
    BadConfig(String),
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error("credential env var {0} is not set")]
    MissingCredential(String),
    #[error("mock script exhausted; no entry matches request starting: {request:?}")]
    MockScriptExhausted { request: String },
    #[error("transport failure after {attempts} attempt(s): {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("rate limited by provider after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

enum Backend {
    Mock(MockClient),
    Remote(RemoteClient),
}

/// A configured chat-completion client. Cheap to share; all methods take
/// `&self` and are safe for concurrent callers.
pub struct LlmHandle {
    config: LlmConfig,
    backend: Backend,
    bucket: RateLimiter,
    gate: InFlightGate,
    clock: Arc<dyn Clock>,
}

impl LlmHandle {
    /// Build a handle. Mock configs require a script.
    pub fn new(config: LlmConfig, script: Option<MockScript>) -> Result<Self, LlmError> {
        Self::with_clock(config, script, Arc::new(SystemClock::default()))
    }

    pub fn with_clock(
        config: LlmConfig,
        script: Option<MockScript>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, LlmError> {
        config.check()?;
        let backend = match config.backend {
            BackendKind::Mock => {
                let script = script.ok_or_else(|| {
                    LlmError::BadConfig("mock backend requires a loaded script".into())
                })?;
                Backend::Mock(MockClient::new(script))
            }
            BackendKind::Remote => Backend::Remote(RemoteClient::new(&config)?),
        };
        Ok(LlmHandle {
            bucket: RateLimiter::new(config.requests_per_minute),
            gate: InFlightGate::new(config.max_in_flight),
            config,
            backend,
            clock,
        })
    }

    pub fn mock(script: MockScript) -> Self {
        Self::new(LlmConfig::mock("mock"), Some(script)).expect("mock config is valid")
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    pub fn is_mock(&self) -> bool {
        matches!(self.backend, Backend::Mock(_))
    }

    /// Number of requests the mock backend has seen; None for remote.
    pub fn mock_calls(&self) -> Option<u64> {
        match &self.backend {
            Backend::Mock(client) => Some(client.calls()),
            Backend::Remote(_) => None,
        }
    }

    /// Rendered texts of all requests seen by the mock backend.
    pub fn mock_requests(&self) -> Option<Vec<String>> {
        match &self.backend {
            Backend::Mock(client) => Some(client.seen_requests()),
            Backend::Remote(_) => None,
        }
    }

    /// Run one chat completion. Applies the rate cap and in-flight bound for
    /// both backends.
    pub fn complete(&self, req: &ChatTurnRequest) -> Result<ChatTurnResponse, LlmError> {
        req.check()?;
        let _permit = self.gate.enter();
        self.bucket.acquire(self.clock.as_ref());
        match &self.backend {
            Backend::Mock(client) => Ok(ChatTurnResponse {
                text: client.reply(req)?,
                model: self.config.model.clone(),
                usage: Usage::default(),
            }),
            Backend::Remote(client) => client.complete(&self.config, req, self.clock.as_ref()),
        }
    }

    /// Like `complete`, but a mock backend with no fitting script entry
    /// yields `Ok(None)` instead of an error. Remote backends always go
    /// through `complete`.
    pub fn try_complete(&self, req: &ChatTurnRequest) -> Result<Option<ChatTurnResponse>, LlmError> {
        req.check()?;
        match &self.backend {
            Backend::Mock(client) => {
                let _permit = self.gate.enter();
                self.bucket.acquire(self.clock.as_ref());
                Ok(client.try_reply(req).map(|text| ChatTurnResponse {
                    text,
                    model: self.config.model.clone(),
                    usage: Usage::default(),
                }))
            }
            Backend::Remote(_) => self.complete(req).map(Some),
        }
    }
}
