//! Builders for mock-backend scripts that drive the pipeline offline.
//!
//! CI and the examples run the whole chat/ddx pipeline against the scripted
//! mock; these helpers synthesize deterministic, well-formed replies for a
//! given batch of cases so no canned fixtures need to be hand-written.

use crate::kb::KnowledgeBase;
use crate::llm::mock::MockScript;
use crate::scorer::{CaseEntry, Polarity};
use crate::sim::StructuredCase;

use super::ChatMode;

const OPENERS: &[&str] = &[
    "What brings you in today?",
    "Can you tell me more about how you have been feeling?",
    "Anything else you have noticed lately?",
    "How about other symptoms or changes?",
    "Is there anything else going on with your health?",
];

fn finding_name<'a>(kb: &'a KnowledgeBase, entry: &'a CaseEntry) -> &'a str {
    kb.finding(&entry.finding)
        .map(|f| f.name.as_str())
        .unwrap_or(entry.finding.as_str())
}

fn patient_line(kb: &KnowledgeBase, chunk: &[CaseEntry]) -> String {
    let mut about_me = Vec::new();
    let mut presents = Vec::new();
    let mut absents = Vec::new();
    for entry in chunk {
        let name = finding_name(kb, entry);
        if entry.polarity == Polarity::Absent {
            absents.push(name);
        } else if let Some(rest) = name.strip_prefix("sex ") {
            about_me.push(format!("I am {rest}"));
        } else if let Some(rest) = name.strip_prefix("age ") {
            about_me.push(format!("my age is {rest}"));
        } else {
            presents.push(name);
        }
    }
    let mut parts = about_me;
    if !presents.is_empty() {
        parts.push(format!("I have been dealing with {}", presents.join(", and ")));
    }
    if !absents.is_empty() {
        if parts.is_empty() {
            parts.push(format!("I have not had {}", absents.join(" or ")));
        } else {
            parts.push(format!("but I have not had {}", absents.join(" or ")));
        }
    }
    if parts.is_empty() {
        return "Nothing new to report.".to_string();
    }
    let mut line = format!("{}.", parts.join(", "));
    if let Some(first) = line.get(..1) {
        let upper = first.to_uppercase();
        line.replace_range(..1, &upper);
    }
    line
}

fn findings_tag(chunk: &[CaseEntry]) -> String {
    if chunk.is_empty() {
        return "none".to_string();
    }
    chunk
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
        .collect::<Vec<_>>()
        .join("; ")
}

fn rounds(kb: &KnowledgeBase, entries: &[CaseEntry], start: usize) -> String {
    let mut out = String::new();
    for (i, chunk) in entries.chunks(2).enumerate() {
        out.push_str(&format!(
            "provider: {}\n",
            OPENERS[(start + i) % OPENERS.len()]
        ));
        out.push_str(&format!("patient: {}\n", patient_line(kb, chunk)));
        out.push_str(&format!("findings: {}\n", findings_tag(chunk)));
    }
    out
}

/// A complete `<chat>` reply covering every finding of the case, two per
/// patient message.
pub fn scripted_chat_reply(kb: &KnowledgeBase, case: &StructuredCase) -> String {
    format!("<chat>\n{}</chat>", rounds(kb, &case.findings.entries, 0))
}

/// A single `<turn>` reply covering the given entries (at most three).
pub fn scripted_turn_reply(kb: &KnowledgeBase, entries: &[CaseEntry]) -> String {
    debug_assert!(entries.len() <= 3);
    format!(
        "<turn>\nprovider: {}\npatient: {}\nfindings: {}\n</turn>",
        OPENERS[entries.len() % OPENERS.len()],
        patient_line(kb, entries),
        findings_tag(entries)
    )
}

/// Ordinal script answering the chat-generation requests for `cases` in
/// order. Profiles are expected to come from the local sampler, so the
/// script contains chat replies only.
pub fn chat_script_for_cases(
    kb: &KnowledgeBase,
    cases: &[&StructuredCase],
    mode: ChatMode,
) -> MockScript {
    let mut script = MockScript::default();
    for case in cases {
        match mode {
            ChatMode::Single => script.push_ordinal(scripted_chat_reply(kb, case)),
            ChatMode::Turnwise => {
                for chunk in case.findings.entries.chunks(2) {
                    script.push_ordinal(scripted_turn_reply(kb, chunk));
                }
            }
        }
    }
    script
}

/// A `<ddx>` reply listing the given names in order.
pub fn ddx_reply(names: &[String]) -> String {
    let mut out = String::from("<ddx>\n");
    for (i, name) in names.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, name));
    }
    out.push_str("</ddx>");
    out
}

/// Five common conditions no rare-disease knowledge base contains; the
/// stand-in for a model that never names rare diseases unprompted.
pub const COMMON_DDX: [&str; 5] = [
    "common cold",
    "seasonal influenza",
    "viral gastroenteritis",
    "tension headache",
    "community-acquired pneumonia",
];

/// Ordinal script for a DDx model over `per_record_candidates`, one reply
/// per record. With `honor_candidates`, each reply lists that record's
/// candidate names (a model following the candidate instructions); without,
/// every reply is the fixed common-disease list.
pub fn ddx_script_for_records(
    per_record_candidates: &[Vec<String>],
    honor_candidates: bool,
) -> MockScript {
    let mut script = MockScript::default();
    let common: Vec<String> = COMMON_DDX.iter().map(|s| s.to_string()).collect();
    for candidates in per_record_candidates {
        if honor_candidates && !candidates.is_empty() {
            let mut names = candidates.clone();
            for filler in COMMON_DDX {
                if names.len() >= 5 {
                    break;
                }
                names.push(filler.to_string());
            }
            script.push_ordinal(ddx_reply(&names));
        } else {
            script.push_ordinal(ddx_reply(&common));
        }
    }
    script
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::synth_kb;
    use crate::scorer::{ScoreWeights, DDX_CAP};
    use crate::sim::{simulate_disease, SimConfig};

    #[test]
    fn scripted_chat_reply_parses_and_covers() {
        let kb = synth_kb(2, 6, 40, 6..=10).unwrap();
        let config = SimConfig {
            rng_seed: 2,
            max_attempts: 60,
            min_valid: 1,
            ..SimConfig::default()
        };
        let weights = ScoreWeights::default();
        let mut checked = 0;
        for disease in kb.diseases.keys() {
            let outcome = simulate_disease(&kb, &weights, disease, &config).unwrap();
            for sim in outcome.cases().iter().take(2) {
                let reply = scripted_chat_reply(&kb, &sim.case);
                let messages =
                    super::super::transcript::parse_chat_block(&reply, &sim.case.findings)
                        .unwrap();
                let covered: std::collections::BTreeSet<_> = messages
                    .iter()
                    .flat_map(|m| m.findings.iter().cloned())
                    .collect();
                let expected: std::collections::BTreeSet<_> =
                    sim.case.findings.entries.iter().cloned().collect();
                assert_eq!(covered, expected);
                for m in &messages {
                    assert!(m.findings.len() <= 3);
                }
                checked += 1;
            }
        }
        assert!(checked > 0);
        let _ = DDX_CAP;
    }

    #[test]
    fn ddx_reply_formats_numbered_list() {
        let reply = ddx_reply(&["alpha".into(), "beta".into()]);
        assert!(reply.contains("1. alpha"));
        assert!(reply.contains("2. beta"));
        assert!(reply.starts_with("<ddx>"));
    }
}
