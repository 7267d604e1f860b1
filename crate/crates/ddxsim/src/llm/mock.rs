//! Deterministic scripted backend for offline runs and tests.
//!
//! A script is an ordered list of entries, each pairing a request matcher
//! with a canned reply. Every request consumes the first unconsumed entry
//! whose matcher fits; a request with no fitting entry is a
//! script-exhausted error. Identical scripts replayed against identical
//! request sequences produce identical response sequences.
//!
//! Script files are JSON lines, one entry per line:
//!
//! ```text
//! {"match": "any", "reply": "ok"}
//! {"match": {"substring": "fever"}, "reply": "..."}
//! {"match": {"ordinal": 3}, "reply": "third request gets this"}
//! ```

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatTurnRequest, LlmError};

/// How a script entry decides whether it answers a request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockMatcher {
    /// Fits every request.
    Any,
    /// Fits when the concatenated request text contains the string.
    Substring(String),
    /// Fits only the n-th request made against this client (1-based).
    Ordinal(u64),
}

impl MockMatcher {
    fn fits(&self, request_text: &str, request_index: u64) -> bool {
        match self {
            MockMatcher::Any => true,
            MockMatcher::Substring(s) => request_text.contains(s.as_str()),
            MockMatcher::Ordinal(n) => *n == request_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockEntry {
    #[serde(rename = "match")]
    pub matcher: MockMatcher,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MockScript {
    pub entries: Vec<MockEntry>,
}

impl MockScript {
    pub fn new(entries: Vec<MockEntry>) -> Self {
        MockScript { entries }
    }

    /// Single entry answering every request with `reply`.
    pub fn always(reply: impl Into<String>) -> Self {
        MockScript {
            entries: vec![MockEntry {
                matcher: MockMatcher::Any,
                reply: reply.into(),
            }],
        }
    }

    /// Append one reply for the next unanswered ordinal position.
    pub fn push_ordinal(&mut self, reply: impl Into<String>) {
        let next = self.entries.len() as u64 + 1;
        self.entries.push(MockEntry {
            matcher: MockMatcher::Ordinal(next),
            reply: reply.into(),
        });
    }

    pub fn push(&mut self, matcher: MockMatcher, reply: impl Into<String>) {
        self.entries.push(MockEntry {
            matcher,
            reply: reply.into(),
        });
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: MockEntry = serde_json::from_str(line).map_err(|e| {
                LlmError::MalformedResponse(format!(
                    "mock script line {}: {e}",
                    lineno + 1
                ))
            })?;
            entries.push(entry);
        }
        Ok(MockScript { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LlmError> {
        let path = path.as_ref();
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry).expect("entry serializes"));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| LlmError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

/// Renders a request into the text the substring matchers see.
pub fn request_text(req: &ChatTurnRequest) -> String {
    let mut out = String::new();
    for msg in &req.messages {
        out.push_str(msg.role.as_str());
        out.push_str(": ");
        out.push_str(&msg.text);
        out.push('\n');
    }
    out
}

#[derive(Debug, Default)]
struct MockState {
    consumed: Vec<bool>,
    calls: u64,
    transcript: Vec<String>,
}

/// Scripted chat client.
#[derive(Debug)]
pub struct MockClient {
    script: MockScript,
    state: Mutex<MockState>,
}

impl MockClient {
    pub fn new(script: MockScript) -> Self {
        let consumed = vec![false; script.entries.len()];
        MockClient {
            script,
            state: Mutex::new(MockState {
                consumed,
                calls: 0,
                transcript: Vec::new(),
            }),
        }
    }

    /// Answer a request from the script, or error when no entry fits.
    pub fn reply(&self, req: &ChatTurnRequest) -> Result<String, LlmError> {
        match self.try_reply(req) {
            Some(reply) => Ok(reply),
            None => {
                let text = request_text(req);
                let preview: String = text.chars().take(120).collect();
                Err(LlmError::MockScriptExhausted { request: preview })
            }
        }
    }

    /// Answer a request if some unconsumed entry fits it. Counts the call
    /// either way.
    pub fn try_reply(&self, req: &ChatTurnRequest) -> Option<String> {
        let text = request_text(req);
        let mut state = self.state.lock().unwrap();
        state.calls += 1;
        let index = state.calls;
        state.transcript.push(text.clone());
        for (i, entry) in self.script.entries.iter().enumerate() {
            if !state.consumed[i] && entry.matcher.fits(&text, index) {
                state.consumed[i] = true;
                return Some(entry.reply.clone());
            }
        }
        None
    }

    /// Total requests made against this client.
    pub fn calls(&self) -> u64 {
        self.state.lock().unwrap().calls
    }

    /// Rendered text of every request seen, in order.
    pub fn seen_requests(&self) -> Vec<String> {
        self.state.lock().unwrap().transcript.clone()
    }
}
