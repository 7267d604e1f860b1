//! Remote-backend behavior against a local stub server: retry accounting,
//! dialect bodies, and credential hygiene.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use ddxsim::llm::{BackendKind, ChatTurnRequest, LlmConfig, LlmError, LlmHandle, WireDialect};

struct StubServer {
    addr: String,
    requests: Arc<AtomicUsize>,
    bodies: Arc<std::sync::Mutex<Vec<String>>>,
    handle: Option<std::thread::JoinHandle<()>>,
}

/// Serve `responses` (status, body) in order, then close. Counts requests
/// and records request bodies.
fn serve(responses: Vec<(u16, String)>) -> StubServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", listener.local_addr().unwrap());
    let requests = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(std::sync::Mutex::new(Vec::new()));
    let handle = {
        let requests = requests.clone();
        let bodies = bodies.clone();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = match listener.accept() {
                    Ok(pair) => pair,
                    Err(_) => return,
                };
                requests.fetch_add(1, Ordering::SeqCst);
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut content_length = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).is_err() || line.trim().is_empty() {
                        break;
                    }
                    if let Some(value) = line.to_lowercase().strip_prefix("content-length:") {
                        content_length = value.trim().parse().unwrap_or(0);
                    }
                }
                let mut payload = vec![0u8; content_length];
                let _ = reader.read_exact(&mut payload);
                bodies
                    .lock()
                    .unwrap()
                    .push(String::from_utf8_lossy(&payload).to_string());
                let reason = match status {
                    200 => "OK",
                    429 => "Too Many Requests",
                    _ => "Error",
                };
                let response = format!(
                    "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(response.as_bytes());
            }
        })
    };
    StubServer {
        addr,
        requests,
        bodies,
        handle: Some(handle),
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn remote_config(endpoint: &str, dialect: WireDialect, credential_env: &str) -> LlmConfig {
    LlmConfig {
        backend: BackendKind::Remote,
        dialect,
        endpoint: endpoint.to_string(),
        credential_env: credential_env.to_string(),
        backoff_ms: 1,
        timeout_secs: 5,
        ..LlmConfig::mock("stub-model")
    }
}

fn ok_messages_body(text: &str) -> String {
    serde_json::json!({
        "model": "stub-model",
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 12, "completion_tokens": 3},
    })
    .to_string()
}

#[test]
fn rate_limited_twice_then_success_records_two_retries() {
    let server = serve(vec![
        (429, "{}".to_string()),
        (429, "{}".to_string()),
        (200, ok_messages_body("recovered")),
    ]);
    std::env::set_var("DDXSIM_STUB_KEY_A", "k-123");
    let config = remote_config(&server.addr, WireDialect::Messages, "DDXSIM_STUB_KEY_A");
    let llm = LlmHandle::new(config, None).unwrap();
    let response = llm.complete(&ChatTurnRequest::user("ping")).unwrap();
    assert_eq!(response.text, "recovered");
    assert_eq!(response.usage.retries, 2);
    assert_eq!(response.usage.prompt_tokens, Some(12));
    assert_eq!(server.requests.load(Ordering::SeqCst), 3);
}

#[test]
fn retries_exhaust_into_rate_limited_error() {
    let server = serve(vec![(429, "{}".to_string()); 3]);
    std::env::set_var("DDXSIM_STUB_KEY_B", "k-456");
    let mut config = remote_config(&server.addr, WireDialect::Messages, "DDXSIM_STUB_KEY_B");
    config.max_retries = 2;
    let llm = LlmHandle::new(config, None).unwrap();
    let err = llm.complete(&ChatTurnRequest::user("ping")).unwrap_err();
    assert!(matches!(err, LlmError::RateLimited { attempts: 3 }));
    assert_eq!(server.requests.load(Ordering::SeqCst), 3);
}

#[test]
fn non_transient_status_fails_without_retry() {
    let server = serve(vec![(404, "{}".to_string())]);
    std::env::set_var("DDXSIM_STUB_KEY_C", "k-789");
    let config = remote_config(&server.addr, WireDialect::Messages, "DDXSIM_STUB_KEY_C");
    let llm = LlmHandle::new(config, None).unwrap();
    let err = llm.complete(&ChatTurnRequest::user("ping")).unwrap_err();
    assert!(matches!(err, LlmError::Transport { attempts: 1, .. }));
    assert_eq!(server.requests.load(Ordering::SeqCst), 1);
}

#[test]
fn content_blocks_dialect_splits_system_and_parses_usage() {
    let body = serde_json::json!({
        "model": "stub-model",
        "content": [{"type": "text", "text": "blocks ok"}],
        "usage": {"input_tokens": 9, "output_tokens": 2},
    })
    .to_string();
    let server = serve(vec![(200, body)]);
    std::env::set_var("DDXSIM_STUB_KEY_D", "k-abc");
    let config = remote_config(&server.addr, WireDialect::ContentBlocks, "DDXSIM_STUB_KEY_D");
    let llm = LlmHandle::new(config, None).unwrap();
    let response = llm
        .complete(&ChatTurnRequest::system_user("be terse", "question"))
        .unwrap();
    assert_eq!(response.text, "blocks ok");
    assert_eq!(response.usage.prompt_tokens, Some(9));
    let bodies = server.bodies.lock().unwrap();
    let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(sent["system"], serde_json::json!("be terse"));
    assert_eq!(sent["messages"].as_array().unwrap().len(), 1);
    assert_eq!(sent["messages"][0]["content"][0]["type"], "text");
}

#[test]
fn missing_credential_env_is_an_error() {
    std::env::remove_var("DDXSIM_STUB_KEY_UNSET");
    let config = remote_config(
        "http://127.0.0.1:9",
        WireDialect::Messages,
        "DDXSIM_STUB_KEY_UNSET",
    );
    let llm = LlmHandle::new(config, None).unwrap();
    let err = llm.complete(&ChatTurnRequest::user("ping")).unwrap_err();
    assert!(matches!(err, LlmError::MissingCredential(name) if name == "DDXSIM_STUB_KEY_UNSET"));
}

/// The secret value must never surface in serialized configs or error text,
/// even when the transport fails.
#[test]
fn credential_value_never_leaks_into_artifacts() {
    let secret = "hush-hush-credential-0xdeadbeef";
    std::env::set_var("DDXSIM_STUB_SECRET", secret);

    let mut config = remote_config(
        // Nothing listens here; the connection fails and errors flow back.
        "http://127.0.0.1:9",
        WireDialect::Messages,
        "DDXSIM_STUB_SECRET",
    );
    config.max_retries = 1;

    let serialized = serde_json::to_string(&config).unwrap();
    assert!(!serialized.contains(secret));
    let toml_text = toml::to_string(&config).unwrap();
    assert!(!toml_text.contains(secret));

    let llm = LlmHandle::new(config, None).unwrap();
    let err = llm.complete(&ChatTurnRequest::user("ping")).unwrap_err();
    let rendered = format!("{err} / {err:?}");
    assert!(!rendered.contains(secret), "error text leaked the secret");
}
