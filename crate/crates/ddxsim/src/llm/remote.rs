//! Remote provider client speaking the two supported wire dialects.
//!
//! Transient failures (connection errors, 429, 5xx) are retried with
//! exponential backoff up to `max_retries`; anything else fails fast. The
//! credential is read from the configured environment variable per request
//! and never appears in errors or serialized state.

use std::time::Duration;

use serde_json::{json, Value};

use super::rate::Clock;
use super::{ChatTurnRequest, ChatTurnResponse, LlmConfig, LlmError, Role, Usage, WireDialect};

pub struct RemoteClient {
    http: reqwest::blocking::Client,
}

impl RemoteClient {
    pub fn new(config: &LlmConfig) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::BadConfig(format!("http client: {e}")))?;
        Ok(RemoteClient { http })
    }

    pub fn complete(
        &self,
        config: &LlmConfig,
        req: &ChatTurnRequest,
        clock: &dyn Clock,
    ) -> Result<ChatTurnResponse, LlmError> {
        let secret = credential(config)?;
        let body = match config.dialect {
            WireDialect::Messages => messages_body(config, req),
            WireDialect::ContentBlocks => content_blocks_body(config, req),
        };

        let mut retries = 0u32;
        loop {
            let attempt_no = retries + 1;
            let request = match config.dialect {
                WireDialect::Messages => self
                    .http
                    .post(&config.endpoint)
                    .bearer_auth(&secret)
                    .json(&body),
                WireDialect::ContentBlocks => self
                    .http
                    .post(&config.endpoint)
                    .header("x-api-key", &secret)
                    .header("anthropic-version", "2023-06-01")
                    .json(&body),
            };

            let outcome = match request.send() {
                Err(e) => Retry::Transport(sanitize(&e.to_string(), &secret)),
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let value: Value = resp.json().map_err(|e| {
                            LlmError::MalformedResponse(sanitize(&e.to_string(), &secret))
                        })?;
                        let mut parsed = parse_response(config.dialect, &value)?;
                        parsed.usage.retries = retries;
                        return Ok(parsed);
                    } else if status.as_u16() == 429 {
                        Retry::RateLimited
                    } else if status.is_server_error() {
                        Retry::Transport(format!("server returned {status}"))
                    } else {
                        return Err(LlmError::Transport {
                            attempts: attempt_no,
                            detail: format!("provider returned {status}"),
                        });
                    }
                }
            };

            if retries >= config.max_retries {
                return Err(match outcome {
                    Retry::RateLimited => LlmError::RateLimited { attempts: attempt_no },
                    Retry::Transport(detail) => LlmError::Transport {
                        attempts: attempt_no,
                        detail,
                    },
                });
            }
            clock.sleep_ms(config.backoff_ms << retries);
            retries += 1;
        }
    }
}

enum Retry {
    RateLimited,
    Transport(String),
}

fn credential(config: &LlmConfig) -> Result<String, LlmError> {
    if config.credential_env.is_empty() {
        return Ok(String::new());
    }
    std::env::var(&config.credential_env)
        .map_err(|_| LlmError::MissingCredential(config.credential_env.clone()))
}

/// Strip the secret from provider/transport text before it can reach an
/// error message.
fn sanitize(text: &str, secret: &str) -> String {
    if secret.is_empty() {
        text.to_string()
    } else {
        text.replace(secret, "[redacted]")
    }
}

fn messages_body(config: &LlmConfig, req: &ChatTurnRequest) -> Value {
    let messages: Vec<Value> = req
        .messages
        .iter()
        .map(|m| json!({"role": m.role.as_str(), "content": m.text}))
        .collect();
    json!({
        "model": config.model,
        "temperature": config.temperature,
        "messages": messages,
    })
}

fn content_blocks_body(config: &LlmConfig, req: &ChatTurnRequest) -> Value {
    let system: Vec<&str> = req
        .messages
        .iter()
        .filter(|m| m.role == Role::System)
        .map(|m| m.text.as_str())
        .collect();
    let messages: Vec<Value> = req
        .messages
        .iter()
        .filter(|m| m.role != Role::System)
        .map(|m| {
            json!({
                "role": m.role.as_str(),
                "content": [{"type": "text", "text": m.text}],
            })
        })
        .collect();
    let mut body = json!({
        "model": config.model,
        "max_tokens": config.max_tokens,
        "temperature": config.temperature,
        "messages": messages,
    });
    if !system.is_empty() {
        body["system"] = json!(system.join("\n"));
    }
    body
}

fn parse_response(dialect: WireDialect, value: &Value) -> Result<ChatTurnResponse, LlmError> {
    match dialect {
        WireDialect::Messages => {
            let text = value["choices"][0]["message"]["content"]
                .as_str()
                .ok_or_else(|| {
                    LlmError::MalformedResponse("missing choices[0].message.content".into())
                })?;
            Ok(ChatTurnResponse {
                text: text.to_string(),
                model: value["model"].as_str().unwrap_or_default().to_string(),
                usage: Usage {
                    prompt_tokens: value["usage"]["prompt_tokens"].as_u64(),
                    completion_tokens: value["usage"]["completion_tokens"].as_u64(),
                    retries: 0,
                },
            })
        }
        WireDialect::ContentBlocks => {
            let text = value["content"][0]["text"].as_str().ok_or_else(|| {
                LlmError::MalformedResponse("missing content[0].text".into())
            })?;
            Ok(ChatTurnResponse {
                text: text.to_string(),
                model: value["model"].as_str().unwrap_or_default().to_string(),
                usage: Usage {
                    prompt_tokens: value["usage"]["input_tokens"].as_u64(),
                    completion_tokens: value["usage"]["output_tokens"].as_u64(),
                    retries: 0,
                },
            })
        }
    }
}
