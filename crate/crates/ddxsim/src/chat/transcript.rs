//! The fenced, line-tagged transcript format exchanged with the chat LLM.
//!
//! A full conversation arrives as a `<chat>` block, a turnwise step as a
//! `<turn>` block. Inside a block, every non-blank line must be a
//! `provider:`, `patient:`, or `findings:` line; a findings line follows
//! every patient line and names the finding ids that message communicated.
//! Any deviation is a hard parse error — the checker loop depends on exact
//! coverage accounting, so there is no best-effort recovery.

use crate::kb::{FindingId, KnowledgeBase};
use crate::scorer::{CaseEntry, CaseFindings, Polarity};

use super::{ChatError, ChatMessage, ChatRole};

/// Extract the contents of the first `<tag>...</tag>` block. Text outside
/// the fence is ignored; a missing fence is an error.
pub fn fenced_block<'a>(text: &'a str, tag: &str) -> Result<&'a str, ChatError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open).ok_or_else(|| ChatError::Unparseable {
        what: "fenced block",
        detail: format!("no {open} fence in response"),
    })?;
    let rest = &text[start + open.len()..];
    let end = rest.find(&close).ok_or_else(|| ChatError::Unparseable {
        what: "fenced block",
        detail: format!("{open} fence is never closed"),
    })?;
    Ok(&rest[..end])
}

fn tagged<'a>(line: &'a str, tag: &str) -> Option<&'a str> {
    let head = line.get(..tag.len())?;
    if head.eq_ignore_ascii_case(tag) {
        Some(line[tag.len()..].trim())
    } else {
        None
    }
}

fn parse_findings_line(
    line: &str,
    case: &CaseFindings,
) -> Result<Vec<CaseEntry>, ChatError> {
    let line = line.trim();
    if line.is_empty() || line.eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for part in line.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (id, polarity) = part.split_once('=').ok_or_else(|| ChatError::Unparseable {
            what: "findings line",
            detail: format!("expected <id>=<polarity>, got {part:?}"),
        })?;
        let id = FindingId::new(id.trim());
        let polarity = match polarity.trim().to_ascii_lowercase().as_str() {
            "present" => Polarity::Present,
            "absent" => Polarity::Absent,
            other => {
                return Err(ChatError::Unparseable {
                    what: "findings line",
                    detail: format!("polarity must be present or absent, got {other:?}"),
                })
            }
        };
        if case.polarity_of(&id).is_none() {
            return Err(ChatError::UnknownAnnotation { finding: id });
        }
        out.push(CaseEntry {
            finding: id,
            polarity,
        });
    }
    Ok(out)
}

/// Parse the body of a `<chat>` or `<turn>` fence into provider/patient
/// messages with their finding annotations.
fn parse_rounds(body: &str, case: &CaseFindings) -> Result<Vec<ChatMessage>, ChatError> {
    let mut messages: Vec<ChatMessage> = Vec::new();
    for raw in body.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(text) = tagged(line, "provider:") {
            match messages.last() {
                None => {}
                Some(prev) if prev.role == ChatRole::Patient => {}
                Some(_) => {
                    return Err(ChatError::Unparseable {
                        what: "transcript",
                        detail: "provider line must open the chat or follow a patient line".into(),
                    })
                }
            }
            messages.push(ChatMessage {
                role: ChatRole::Provider,
                text: text.to_string(),
                findings: Vec::new(),
            });
        } else if let Some(text) = tagged(line, "patient:") {
            if messages.last().map(|m| m.role) != Some(ChatRole::Provider) {
                return Err(ChatError::Unparseable {
                    what: "transcript",
                    detail: "patient line must follow a provider line".into(),
                });
            }
            messages.push(ChatMessage {
                role: ChatRole::Patient,
                text: text.to_string(),
                findings: Vec::new(),
            });
        } else if let Some(rest) = tagged(line, "findings:") {
            let last = messages.last_mut().ok_or_else(|| ChatError::Unparseable {
                what: "transcript",
                detail: "findings line before any message".into(),
            })?;
            if last.role != ChatRole::Patient {
                return Err(ChatError::Unparseable {
                    what: "transcript",
                    detail: "findings line must follow a patient line".into(),
                });
            }
            if !last.findings.is_empty() {
                return Err(ChatError::Unparseable {
                    what: "transcript",
                    detail: "patient message has two findings lines".into(),
                });
            }
            last.findings = parse_findings_line(rest, case)?;
        } else {
            return Err(ChatError::Unparseable {
                what: "transcript",
                detail: format!("unrecognized line {line:?}"),
            });
        }
    }
    if messages.is_empty() {
        return Err(ChatError::Unparseable {
            what: "transcript",
            detail: "fence contains no messages".into(),
        });
    }
    if messages.last().map(|m| m.role) == Some(ChatRole::Provider) {
        return Err(ChatError::Unparseable {
            what: "transcript",
            detail: "chat ends on an unanswered provider question".into(),
        });
    }
    Ok(messages)
}

/// Parse a full-conversation `<chat>` block.
pub fn parse_chat_block(text: &str, case: &CaseFindings) -> Result<Vec<ChatMessage>, ChatError> {
    parse_rounds(fenced_block(text, "chat")?, case)
}

/// Parse a single `<turn>` block: exactly one provider question and one
/// patient answer.
pub fn parse_turn_block(text: &str, case: &CaseFindings) -> Result<Vec<ChatMessage>, ChatError> {
    let messages = parse_rounds(fenced_block(text, "turn")?, case)?;
    if messages.len() != 2 {
        return Err(ChatError::Unparseable {
            what: "turn",
            detail: format!(
                "turn must contain exactly one provider/patient round, got {} messages",
                messages.len()
            ),
        });
    }
    Ok(messages)
}

/// Render provider/patient messages back into the tagged wire format
/// (system messages are omitted; they are never part of the fence).
pub fn render_transcript(messages: &[ChatMessage]) -> String {
    let mut out = String::new();
    for msg in messages {
        match msg.role {
            ChatRole::System => continue,
            ChatRole::Provider => {
                out.push_str("provider: ");
                out.push_str(&msg.text);
                out.push('\n');
            }
            ChatRole::Patient => {
                out.push_str("patient: ");
                out.push_str(&msg.text);
                out.push('\n');
                out.push_str("findings: ");
                if msg.findings.is_empty() {
                    out.push_str("none");
                } else {
                    let parts: Vec<String> = msg
                        .findings
                        .iter()
                        .map(|e| {
                            format!(
                                "{}={}",
                                e.finding,
                                match e.polarity {
                                    Polarity::Present => "present",
                                    Polarity::Absent => "absent",
                                }
                            )
                        })
                        .collect();
                    out.push_str(&parts.join("; "));
                }
                out.push('\n');
            }
        }
    }
    out
}

/// Plain role-tagged text with no finding annotations; the candidate-model
/// input representation.
pub fn render_plain(messages: &[ChatMessage]) -> String {
    let mut out = String::new();
    for msg in messages {
        let role = match msg.role {
            ChatRole::System => "System",
            ChatRole::Provider => "Provider",
            ChatRole::Patient => "Patient",
        };
        out.push_str(role);
        out.push_str(": ");
        out.push_str(&msg.text);
        out.push('\n');
    }
    out
}

/// Human-readable rendering with bracketed finding annotations after each
/// annotated patient message.
pub fn render_annotated(messages: &[ChatMessage], kb: &KnowledgeBase) -> String {
    let mut out = String::new();
    for msg in messages {
        let role = match msg.role {
            ChatRole::System => "System",
            ChatRole::Provider => "Provider",
            ChatRole::Patient => "Patient",
        };
        out.push_str(role);
        out.push_str(": ");
        out.push_str(&msg.text);
        out.push('\n');
        if !msg.findings.is_empty() {
            let parts: Vec<String> = msg
                .findings
                .iter()
                .map(|e| {
                    let name = kb
                        .finding(&e.finding)
                        .map(|f| f.name.as_str())
                        .unwrap_or(e.finding.as_str());
                    format!(
                        "{name} ({})",
                        match e.polarity {
                            Polarity::Present => "present",
                            Polarity::Absent => "absent",
                        }
                    )
                })
                .collect();
            out.push_str(&format!("[findings: {}]\n", parts.join(", ")));
        }
    }
    out
}
