//! History-taking chat generation from structured cases.
//!
//! A chat starts with a system message carrying the demographic profile,
//! then alternates provider questions and patient answers, provider first.
//! Patient messages are annotated with the findings they communicate, at
//! most three per message. Retained chats must cover the case's finding
//! set exactly; the checker loop repairs incomplete chats with up to three
//! edit attempts and discards the chat when all of them fail.

pub mod scripting;
pub mod transcript;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kb::{DiseaseId, FindingId, KnowledgeBase};
use crate::llm::template::{vars, TemplateSet};
use crate::llm::{ChatTurnRequest, LlmError, LlmHandle};
use crate::scorer::{CaseEntry, CaseFindings, Polarity};
use crate::sim::StructuredCase;

/// Hard cap on finding annotations per patient message.
pub const MAX_FINDINGS_PER_MESSAGE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    Provider,
    Patient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub text: String,
    /// Non-empty only for patient messages.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub findings: Vec<CaseEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatMode {
    Single,
    Turnwise,
}

impl std::str::FromStr for ChatMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(ChatMode::Single),
            "turnwise" => Ok(ChatMode::Turnwise),
            other => Err(format!("unknown chat mode {other:?} (single|turnwise)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMeta {
    pub model: String,
    pub mode: ChatMode,
    pub repair_attempts: u32,
    pub discarded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRecord {
    pub case_id: String,
    pub seed_disease: DiseaseId,
    pub messages: Vec<ChatMessage>,
    pub meta: ChatMeta,
}

impl ChatRecord {
    /// Union of patient-message finding annotations.
    pub fn covered(&self) -> BTreeSet<CaseEntry> {
        self.messages
            .iter()
            .flat_map(|m| m.findings.iter().cloned())
            .collect()
    }

    /// Message-role grammar: system first, then provider/patient alternating
    /// with provider leading; annotations only on patient messages.
    pub fn check_roles(&self) -> Result<(), ChatError> {
        if self.messages.first().map(|m| m.role) != Some(ChatRole::System) {
            return Err(ChatError::BadRecord("first message must be system".into()));
        }
        for (i, msg) in self.messages.iter().enumerate().skip(1) {
            let expected = if i % 2 == 1 {
                ChatRole::Provider
            } else {
                ChatRole::Patient
            };
            if msg.role != expected {
                return Err(ChatError::BadRecord(format!(
                    "message {i} must be {expected:?}"
                )));
            }
            if msg.role != ChatRole::Patient && !msg.findings.is_empty() {
                return Err(ChatError::BadRecord(format!(
                    "message {i} is not a patient message but carries annotations"
                )));
            }
        }
        Ok(())
    }
}

/// Per-disease store of patient phrasings per finding; grows monotonically
/// within a generation run and feeds the "do not repeat yourself" prompt
/// section.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhraseBank {
    map: BTreeMap<DiseaseId, BTreeMap<FindingId, Vec<String>>>,
}

impl PhraseBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn phrases(&self, disease: &DiseaseId, finding: &FindingId) -> &[String] {
        self.map
            .get(disease)
            .and_then(|m| m.get(finding))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn add(&mut self, disease: &DiseaseId, finding: &FindingId, phrase: &str) {
        let list = self
            .map
            .entry(disease.clone())
            .or_default()
            .entry(finding.clone())
            .or_default();
        if !list.iter().any(|p| p == phrase) {
            list.push(phrase.to_string());
        }
    }

    pub fn count(&self, disease: &DiseaseId, finding: &FindingId) -> usize {
        self.phrases(disease, finding).len()
    }

    fn absorb(&mut self, disease: &DiseaseId, messages: &[ChatMessage]) {
        for msg in messages {
            if msg.role != ChatRole::Patient {
                continue;
            }
            for entry in &msg.findings {
                self.add(disease, &entry.finding, &msg.text);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicProfile {
    pub name: String,
    pub gender: String,
    pub age: u32,
    pub race: String,
    pub education: String,
    pub location: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ChatError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("unparseable response ({what}): {detail}")]
    Unparseable { what: &'static str, detail: String },
    #[error("annotation references finding {finding} which is not in the case")]
    UnknownAnnotation { finding: FindingId },
    #[error("profile contradicts case demographics after retry: {0}")]
    ProfileContradiction(String),
    #[error("malformed chat record: {0}")]
    BadRecord(String),
}

// ---------------------------------------------------------------------------
// Demographic profiles
// ---------------------------------------------------------------------------

/// Demographic slots fixed by the case's present demographic findings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixedSlots {
    pub gender: Option<String>,
    pub age_range: Option<(u32, u32)>,
}

/// Derive fixed slots from the case. The sex group pins gender; an age
/// group pins an age range parsed from the finding name ("age 26 to 55",
/// "age under 26", "age over 55").
pub fn fixed_slots(case: &StructuredCase) -> FixedSlots {
    let mut fixed = FixedSlots::default();
    for (group, value) in &case.demographics {
        let lowered = value.to_lowercase();
        if group == "sex" {
            fixed.gender = Some(if lowered.contains("female") {
                "female".to_string()
            } else if lowered.contains("male") {
                "male".to_string()
            } else {
                lowered.clone()
            });
        } else if group == "age" {
            fixed.age_range = Some(parse_age_range(&lowered));
        }
    }
    fixed
}

fn parse_age_range(name: &str) -> (u32, u32) {
    let numbers: Vec<u32> = name
        .split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
        .filter_map(|s| s.parse().ok())
        .collect();
    match numbers.as_slice() {
        [a, b, ..] => (*a.min(b), *a.max(b)),
        [n] => {
            if name.contains("under") || name.contains("less") || name.contains("below") {
                (1, n.saturating_sub(1).max(1))
            } else if name.contains("over") || name.contains("greater") || name.contains("above") {
                (n + 1, (n + 40).min(95))
            } else {
                (*n, *n)
            }
        }
        [] => (18, 90),
    }
}

const SAMPLE_NAMES: &[&str] = &[
    "Alex", "Bianca", "Carmen", "Dmitri", "Elena", "Farid", "Grace", "Hiro", "Imani", "Jonas",
    "Katya", "Luis", "Mara", "Noor", "Otis", "Priya", "Quinn", "Rosa", "Samir", "Tessa",
];
const SAMPLE_RACES: &[&str] = &[
    "white", "Black", "Hispanic", "East Asian", "South Asian", "Middle Eastern", "mixed race",
];
const SAMPLE_EDUCATION: &[&str] = &[
    "high school", "some college", "college degree", "graduate degree", "trade school",
];
const SAMPLE_LOCATIONS: &[&str] = &[
    "Portland, Oregon",
    "Austin, Texas",
    "Columbus, Ohio",
    "Tucson, Arizona",
    "Burlington, Vermont",
    "Savannah, Georgia",
    "Duluth, Minnesota",
    "Spokane, Washington",
];

fn pick<'a>(rng: &mut ChaCha8Rng, list: &[&'a str]) -> &'a str {
    list[rng.gen_range(0..list.len())]
}

fn sample_profile(fixed: &FixedSlots, rng: &mut ChaCha8Rng) -> DemographicProfile {
    let (lo, hi) = fixed.age_range.unwrap_or((18, 90));
    DemographicProfile {
        name: pick(rng, SAMPLE_NAMES).to_string(),
        gender: fixed
            .gender
            .clone()
            .unwrap_or_else(|| if rng.gen_bool(0.5) { "female" } else { "male" }.to_string()),
        age: rng.gen_range(lo..=hi),
        race: pick(rng, SAMPLE_RACES).to_string(),
        education: pick(rng, SAMPLE_EDUCATION).to_string(),
        location: pick(rng, SAMPLE_LOCATIONS).to_string(),
    }
}

fn validate_profile(profile: &DemographicProfile, fixed: &FixedSlots) -> Result<(), String> {
    if let Some(gender) = &fixed.gender {
        if !profile.gender.eq_ignore_ascii_case(gender) {
            return Err(format!(
                "gender {:?} contradicts case demographic {:?}",
                profile.gender, gender
            ));
        }
    }
    if let Some((lo, hi)) = fixed.age_range {
        if profile.age < lo || profile.age > hi {
            return Err(format!(
                "age {} outside case demographic range {lo}..={hi}",
                profile.age
            ));
        }
    }
    Ok(())
}

fn parse_profile_block(text: &str) -> Result<DemographicProfile, ChatError> {
    let body = transcript::fenced_block(text, "profile")?;
    let mut slots: BTreeMap<String, String> = BTreeMap::new();
    for line in body.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once(':').ok_or_else(|| ChatError::Unparseable {
            what: "profile",
            detail: format!("expected slot: value, got {line:?}"),
        })?;
        slots.insert(key.trim().to_lowercase(), value.trim().to_string());
    }
    let slot = |name: &str| -> Result<String, ChatError> {
        slots.get(name).cloned().ok_or_else(|| ChatError::Unparseable {
            what: "profile",
            detail: format!("missing slot {name}"),
        })
    };
    let age: u32 = slot("age")?.parse().map_err(|_| ChatError::Unparseable {
        what: "profile",
        detail: "age is not a whole number".into(),
    })?;
    Ok(DemographicProfile {
        name: slot("name")?,
        gender: slot("gender")?.to_lowercase(),
        age,
        race: slot("race")?,
        education: slot("education")?,
        location: slot("location")?,
    })
}

fn profile_prompt(fixed: &FixedSlots, templates: &TemplateSet) -> Result<String, ChatError> {
    let mut fixed_lines = Vec::new();
    let mut missing = vec!["name", "race", "education", "location"];
    match &fixed.gender {
        Some(g) => fixed_lines.push(format!("gender: {g}")),
        None => missing.push("gender"),
    }
    match fixed.age_range {
        Some((lo, hi)) => fixed_lines.push(format!("age: between {lo} and {hi} years")),
        None => missing.push("age"),
    }
    if fixed.age_range.is_some() {
        // Age still needs a concrete value from the filler.
        missing.push("age (within the fixed range)");
    }
    let fixed_block = if fixed_lines.is_empty() {
        "(none)".to_string()
    } else {
        fixed_lines.join("\n")
    };
    Ok(templates.profile_fill.render(&vars([
        ("fixed_block", fixed_block.as_str()),
        ("missing_slots", missing.join(", ").as_str()),
    ]))?)
}

/// Build the demographic profile for a case. Slots pinned by demographic
/// findings are copied from the case. The remaining slots come from the
/// LLM when one is supplied, otherwise from a deterministic local sampler
/// (the mock-backend pipeline path). A profile contradicting the case is
/// retried once and then rejected.
pub fn build_profile(
    case: &StructuredCase,
    llm: Option<&LlmHandle>,
    rng: &mut ChaCha8Rng,
    templates: &TemplateSet,
) -> Result<DemographicProfile, ChatError> {
    let fixed = fixed_slots(case);
    let Some(llm) = llm else {
        return Ok(sample_profile(&fixed, rng));
    };
    let prompt = profile_prompt(&fixed, templates)?;
    let mut last_err = String::new();
    for _ in 0..2 {
        let response = llm.complete(&ChatTurnRequest::user(prompt.clone()))?;
        let profile = parse_profile_block(&response.text)?;
        match validate_profile(&profile, &fixed) {
            Ok(()) => return Ok(profile),
            Err(e) => last_err = e,
        }
    }
    Err(ChatError::ProfileContradiction(last_err))
}

// ---------------------------------------------------------------------------
// Prompt blocks
// ---------------------------------------------------------------------------

fn polarity_word(polarity: Polarity) -> &'static str {
    match polarity {
        Polarity::Present => "present",
        Polarity::Absent => "absent",
    }
}

pub fn profile_block(profile: &DemographicProfile) -> String {
    format!(
        "name: {}\ngender: {}\nage: {}\nrace: {}\neducation: {}\nlocation: {}",
        profile.name, profile.gender, profile.age, profile.race, profile.education, profile.location
    )
}

fn findings_lines(kb: &KnowledgeBase, entries: &[CaseEntry]) -> String {
    if entries.is_empty() {
        return "(none)".to_string();
    }
    entries
        .iter()
        .map(|e| {
            let finding = kb.finding(&e.finding);
            let name = finding.map(|f| f.name.as_str()).unwrap_or(e.finding.as_str());
            let mut line = format!("- {}: {} ({})", e.finding, name, polarity_word(e.polarity));
            if let Some(def) = finding.and_then(|f| f.definition.as_deref()) {
                line.push_str("; definition: ");
                line.push_str(def);
            }
            line
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn phrase_block(bank: &PhraseBank, disease: &DiseaseId, case: &CaseFindings) -> String {
    let mut lines = Vec::new();
    for entry in case.iter() {
        let phrases = bank.phrases(disease, &entry.finding);
        if !phrases.is_empty() {
            let quoted: Vec<String> = phrases.iter().map(|p| format!("{p:?}")).collect();
            lines.push(format!("- {}: {}", entry.finding, quoted.join(" | ")));
        }
    }
    if lines.is_empty() {
        "(none)".to_string()
    } else {
        lines.join("\n")
    }
}

/// Rendered single-shot generation prompt; exposed so tests can inspect
/// phrase-bank injection directly.
pub fn single_prompt(
    kb: &KnowledgeBase,
    case: &StructuredCase,
    profile: &DemographicProfile,
    bank: &PhraseBank,
    templates: &TemplateSet,
) -> Result<String, ChatError> {
    let disease_name = kb
        .disease_name(&case.seed_disease)
        .unwrap_or(case.seed_disease.as_str());
    Ok(templates.chat_single.render(&vars([
        ("profile_block", profile_block(profile).as_str()),
        ("disease_name", disease_name),
        (
            "findings_block",
            findings_lines(kb, &case.findings.entries).as_str(),
        ),
        (
            "phrase_block",
            phrase_block(bank, &case.seed_disease, &case.findings).as_str(),
        ),
    ]))?)
}

/// Rendered turnwise prompt for the next provider/patient round.
#[allow(clippy::too_many_arguments)]
pub fn turnwise_prompt(
    kb: &KnowledgeBase,
    case: &StructuredCase,
    profile: &DemographicProfile,
    covered: &[CaseEntry],
    needed: &[CaseEntry],
    messages: &[ChatMessage],
    bank: &PhraseBank,
    templates: &TemplateSet,
) -> Result<String, ChatError> {
    let disease_name = kb
        .disease_name(&case.seed_disease)
        .unwrap_or(case.seed_disease.as_str());
    let transcript = if messages.is_empty() {
        "(conversation has not started)".to_string()
    } else {
        transcript::render_transcript(messages)
    };
    Ok(templates.chat_turnwise.render(&vars([
        ("profile_block", profile_block(profile).as_str()),
        ("disease_name", disease_name),
        ("transcript_block", transcript.as_str()),
        ("covered_block", findings_lines(kb, covered).as_str()),
        ("needed_block", findings_lines(kb, needed).as_str()),
        (
            "phrase_block",
            phrase_block(bank, &case.seed_disease, &case.findings).as_str(),
        ),
    ]))?)
}

fn system_message(profile: &DemographicProfile) -> ChatMessage {
    ChatMessage {
        role: ChatRole::System,
        text: format!(
            "Patient is {}, a {}-year-old {} from {}.",
            profile.name, profile.age, profile.gender, profile.location
        ),
        findings: Vec::new(),
    }
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Generate a chat with one LLM round trip covering the whole conversation.
pub fn generate_chat_single(
    kb: &KnowledgeBase,
    case_id: &str,
    case: &StructuredCase,
    profile: &DemographicProfile,
    llm: &LlmHandle,
    bank: &mut PhraseBank,
    templates: &TemplateSet,
) -> Result<ChatRecord, ChatError> {
    let prompt = single_prompt(kb, case, profile, bank, templates)?;
    let response = llm.complete(&ChatTurnRequest::user(prompt))?;
    let body = transcript::parse_chat_block(&response.text, &case.findings)?;
    let mut messages = vec![system_message(profile)];
    messages.extend(body);
    bank.absorb(&case.seed_disease, &messages);
    Ok(ChatRecord {
        case_id: case_id.to_string(),
        seed_disease: case.seed_disease.clone(),
        messages,
        meta: ChatMeta {
            model: llm.config().model.clone(),
            mode: ChatMode::Single,
            repair_attempts: 0,
            discarded: false,
        },
    })
}

/// Turn cap for turnwise generation: twice the case's finding count.
pub fn turn_cap(case: &StructuredCase) -> usize {
    2 * case.findings.len().max(1)
}

/// Generate a chat one provider/patient round at a time. Each round's
/// prompt separates findings already included from those still needed; the
/// loop ends when nothing is needed or the turn cap is hit (leaving any
/// shortfall to the checker).
pub fn generate_chat_turnwise(
    kb: &KnowledgeBase,
    case_id: &str,
    case: &StructuredCase,
    profile: &DemographicProfile,
    llm: &LlmHandle,
    bank: &mut PhraseBank,
    templates: &TemplateSet,
) -> Result<ChatRecord, ChatError> {
    let target: Vec<CaseEntry> = case.findings.entries.clone();
    let mut messages: Vec<ChatMessage> = Vec::new();
    let mut rounds = 0;
    loop {
        let covered_set: BTreeSet<CaseEntry> = messages
            .iter()
            .flat_map(|m| m.findings.iter().cloned())
            .collect();
        let covered: Vec<CaseEntry> = target
            .iter()
            .filter(|e| covered_set.contains(*e))
            .cloned()
            .collect();
        let needed: Vec<CaseEntry> = target
            .iter()
            .filter(|e| !covered_set.contains(*e))
            .cloned()
            .collect();
        if needed.is_empty() || rounds >= turn_cap(case) {
            break;
        }
        let prompt = turnwise_prompt(
            kb, case, profile, &covered, &needed, &messages, bank, templates,
        )?;
        let response = llm.complete(&ChatTurnRequest::user(prompt))?;
        let round = transcript::parse_turn_block(&response.text, &case.findings)?;
        messages.extend(round);
        rounds += 1;
    }
    let mut all = vec![system_message(profile)];
    all.extend(messages);
    bank.absorb(&case.seed_disease, &all);
    Ok(ChatRecord {
        case_id: case_id.to_string(),
        seed_disease: case.seed_disease.clone(),
        messages: all,
        meta: ChatMeta {
            model: llm.config().model.clone(),
            mode: ChatMode::Turnwise,
            repair_attempts: 0,
            discarded: false,
        },
    })
}

// ---------------------------------------------------------------------------
// Verification and repair
// ---------------------------------------------------------------------------

/// Coverage problems that make a chat unusable as-is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageProblems {
    /// Case findings not communicated by any patient message.
    pub missing: Vec<CaseEntry>,
    /// Annotations whose polarity contradicts the case.
    pub wrong_polarity: Vec<CaseEntry>,
    /// Indices of patient messages with more than the allowed annotations.
    pub over_limit: Vec<usize>,
}

impl CoverageProblems {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.wrong_polarity.is_empty() && self.over_limit.is_empty()
    }
}

/// Compute the coverage problems of a chat against its case.
pub fn coverage_problems(record: &ChatRecord, case: &StructuredCase) -> CoverageProblems {
    let covered = record.covered();
    let case_set: BTreeSet<&CaseEntry> = case.findings.entries.iter().collect();
    let missing: Vec<CaseEntry> = case
        .findings
        .entries
        .iter()
        .filter(|e| !covered.contains(*e))
        .cloned()
        .collect();
    let wrong_polarity: Vec<CaseEntry> = covered
        .iter()
        .filter(|e| !case_set.contains(*e))
        .cloned()
        .collect();
    let over_limit: Vec<usize> = record
        .messages
        .iter()
        .enumerate()
        .filter(|(_, m)| m.role == ChatRole::Patient && m.findings.len() > MAX_FINDINGS_PER_MESSAGE)
        .map(|(i, _)| i)
        .collect();
    CoverageProblems {
        missing,
        wrong_polarity,
        over_limit,
    }
}

fn problems_block(kb: &KnowledgeBase, problems: &CoverageProblems) -> String {
    let mut lines = Vec::new();
    if !problems.missing.is_empty() {
        lines.push(format!(
            "missing findings:\n{}",
            findings_lines(kb, &problems.missing)
        ));
    }
    if !problems.wrong_polarity.is_empty() {
        lines.push(format!(
            "annotations with the wrong polarity (the case requires the opposite):\n{}",
            findings_lines(kb, &problems.wrong_polarity)
        ));
    }
    for index in &problems.over_limit {
        lines.push(format!(
            "patient message {index} reports more than {MAX_FINDINGS_PER_MESSAGE} findings; split it"
        ));
    }
    lines.join("\n")
}

/// Rendered checker/edit prompt; exposed for prompt-inspection tests.
pub fn checker_prompt(
    kb: &KnowledgeBase,
    case: &StructuredCase,
    record: &ChatRecord,
    problems: &CoverageProblems,
    templates: &TemplateSet,
) -> Result<String, ChatError> {
    Ok(templates.checker.render(&vars([
        (
            "transcript_block",
            transcript::render_transcript(&record.messages).as_str(),
        ),
        (
            "findings_block",
            findings_lines(kb, &case.findings.entries).as_str(),
        ),
        ("problems_block", problems_block(kb, problems).as_str()),
    ]))?)
}

/// Verify a chat covers its case exactly and repair it through the checker
/// LLM when it does not: up to three edit round trips, re-verifying after
/// each, then `discarded = true` when problems remain.
pub fn verify_and_repair(
    kb: &KnowledgeBase,
    record: ChatRecord,
    case: &StructuredCase,
    llm: &LlmHandle,
    templates: &TemplateSet,
) -> Result<ChatRecord, ChatError> {
    let mut record = record;
    let mut problems = coverage_problems(&record, case);
    if problems.is_empty() {
        return Ok(record);
    }
    let system = record.messages[0].clone();
    for attempt in 1..=3u32 {
        let prompt = checker_prompt(kb, case, &record, &problems, templates)?;
        let response = llm.complete(&ChatTurnRequest::user(prompt))?;
        let body = transcript::parse_chat_block(&response.text, &case.findings)?;
        let mut messages = vec![system.clone()];
        messages.extend(body);
        record.messages = messages;
        record.meta.repair_attempts = attempt;
        problems = coverage_problems(&record, case);
        if problems.is_empty() {
            return Ok(record);
        }
    }
    record.meta.discarded = true;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::synth_kb;
    use crate::llm::mock::MockScript;
    use crate::scorer::{rank_ddx, ScoreWeights, DDX_CAP};
    use crate::sim::{attempt_rng, sample_case, SampleOutcome, SimConfig};
    use rand::SeedableRng;

    fn templates() -> TemplateSet {
        TemplateSet::builtin()
    }

    fn sample_valid_case(seed: u64) -> (crate::kb::KnowledgeBase, StructuredCase) {
        let kb = synth_kb(seed, 10, 60, 8..=12).unwrap();
        let weights = ScoreWeights::default();
        let config = SimConfig {
            rng_seed: seed,
            max_attempts: 100,
            min_valid: 1,
            ..SimConfig::default()
        };
        for disease in kb.diseases.keys() {
            for attempt in 0..config.max_attempts {
                let mut rng = attempt_rng(config.rng_seed, disease, attempt);
                if let SampleOutcome::Valid(sim) =
                    sample_case(&kb, &weights, disease, &config, &mut rng).unwrap()
                {
                    let case = sim.case;
                    assert!(rank_ddx(&kb, &weights, &case.findings, DDX_CAP)
                        .unwrap()
                        .is_strict_top(disease));
                    return (kb, case);
                }
            }
        }
        panic!("no valid case found");
    }

    #[test]
    fn fixed_slots_copy_through_to_profile() {
        let (_, case) = sample_valid_case(21);
        let fixed = fixed_slots(&case);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let profile = build_profile(&case, None, &mut rng, &templates()).unwrap();
        if let Some(gender) = &fixed.gender {
            assert_eq!(&profile.gender, gender);
        }
        if let Some((lo, hi)) = fixed.age_range {
            assert!(profile.age >= lo && profile.age <= hi);
        }
    }

    #[test]
    fn local_profile_sampling_is_deterministic() {
        let (_, case) = sample_valid_case(22);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            build_profile(&case, None, &mut rng, &templates()).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn contradicting_profile_retries_once_then_errors() {
        let (_, case) = sample_valid_case(23);
        let fixed = fixed_slots(&case);
        let fixed_gender = fixed.gender.clone().expect("synth cases pin sex");
        let wrong = if fixed_gender == "male" { "female" } else { "male" };
        let reply = format!(
            "<profile>\nname: Pat\ngender: {wrong}\nage: 40\nrace: white\neducation: college degree\nlocation: Boise, Idaho\n</profile>"
        );
        let mut script = MockScript::default();
        script.push_ordinal(reply.clone());
        script.push_ordinal(reply);
        let llm = LlmHandle::mock(script);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = build_profile(&case, Some(&llm), &mut rng, &templates()).unwrap_err();
        assert!(matches!(err, ChatError::ProfileContradiction(_)));
        assert_eq!(llm.mock_calls(), Some(2));
    }

    #[test]
    fn scripted_profile_accepted_when_consistent() {
        let (_, case) = sample_valid_case(24);
        let fixed = fixed_slots(&case);
        let gender = fixed.gender.clone().unwrap_or_else(|| "female".into());
        let age = fixed.age_range.map(|(lo, _)| lo).unwrap_or(33);
        let reply = format!(
            "<profile>\nname: Pat\ngender: {gender}\nage: {age}\nrace: white\neducation: college degree\nlocation: Boise, Idaho\n</profile>"
        );
        let llm = LlmHandle::mock(MockScript::always(reply));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let profile = build_profile(&case, Some(&llm), &mut rng, &templates()).unwrap();
        assert_eq!(profile.gender, gender);
        assert_eq!(profile.age, age);
    }

    #[test]
    fn single_mode_parses_scripted_chat_and_fills_bank() {
        let (kb, case) = sample_valid_case(25);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let profile = build_profile(&case, None, &mut rng, &templates()).unwrap();
        let reply = scripting::scripted_chat_reply(&kb, &case);
        let llm = LlmHandle::mock(MockScript::always(reply));
        let mut bank = PhraseBank::new();
        let record = generate_chat_single(
            &kb, "case-1", &case, &profile, &llm, &mut bank, &templates(),
        )
        .unwrap();
        assert!(!record.meta.discarded);
        assert_eq!(record.meta.repair_attempts, 0);
        record.check_roles().unwrap();
        assert!(coverage_problems(&record, &case).is_empty());
        let first = &case.findings.entries[0].finding;
        assert!(bank.count(&case.seed_disease, first) > 0);
    }

    #[test]
    fn response_without_findings_lines_is_unparseable() {
        let (kb, case) = sample_valid_case(26);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let profile = build_profile(&case, None, &mut rng, &templates()).unwrap();
        let llm = LlmHandle::mock(MockScript::always(
            "<chat>\nprovider: q\npatient: a\n",
        ));
        let mut bank = PhraseBank::new();
        let err = generate_chat_single(
            &kb, "case-1", &case, &profile, &llm, &mut bank, &templates(),
        )
        .unwrap_err();
        assert!(matches!(err, ChatError::Unparseable { .. }));
    }

    #[test]
    fn bank_injection_shows_prior_phrasing_in_next_prompt() {
        let (kb, case) = sample_valid_case(27);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let profile = build_profile(&case, None, &mut rng, &templates()).unwrap();
        let reply = scripting::scripted_chat_reply(&kb, &case);
        let llm = LlmHandle::mock(MockScript::always(reply));
        let mut bank = PhraseBank::new();
        let record = generate_chat_single(
            &kb, "case-1", &case, &profile, &llm, &mut bank, &templates(),
        )
        .unwrap();
        let spoken = record
            .messages
            .iter()
            .find(|m| m.role == ChatRole::Patient && !m.findings.is_empty())
            .expect("patient message with findings")
            .text
            .clone();
        // A second case of the same disease must see the prior phrasing.
        let prompt = single_prompt(&kb, &case, &profile, &bank, &templates()).unwrap();
        assert!(prompt.contains(&format!("{spoken:?}")), "prompt lacks {spoken:?}");
    }

    #[test]
    fn bank_counts_never_shrink_across_a_run() {
        let (kb, case) = sample_valid_case(35);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let profile = build_profile(&case, None, &mut rng, &templates()).unwrap();
        let reply = scripting::scripted_chat_reply(&kb, &case);
        let mut bank = PhraseBank::new();
        let mut previous: Vec<usize> = Vec::new();
        for i in 0..3 {
            let llm = LlmHandle::mock(MockScript::always(reply.clone()));
            generate_chat_single(
                &kb,
                &format!("case-{i}"),
                &case,
                &profile,
                &llm,
                &mut bank,
                &templates(),
            )
            .unwrap();
            let counts: Vec<usize> = case
                .findings
                .iter()
                .map(|e| bank.count(&case.seed_disease, &e.finding))
                .collect();
            if !previous.is_empty() {
                for (now, before) in counts.iter().zip(&previous) {
                    assert!(now >= before, "bank shrank: {counts:?} vs {previous:?}");
                }
            }
            previous = counts;
        }
    }

    #[test]
    fn turnwise_covers_in_expected_rounds() {
        let (kb, case) = sample_valid_case(28);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let profile = build_profile(&case, None, &mut rng, &templates()).unwrap();
        let per_turn = 2;
        let mut script = MockScript::default();
        let chunks: Vec<Vec<CaseEntry>> = case
            .findings
            .entries
            .chunks(per_turn)
            .map(|c| c.to_vec())
            .collect();
        for chunk in &chunks {
            script.push_ordinal(scripting::scripted_turn_reply(&kb, chunk));
        }
        let llm = LlmHandle::mock(script);
        let mut bank = PhraseBank::new();
        let record = generate_chat_turnwise(
            &kb, "case-1", &case, &profile, &llm, &mut bank, &templates(),
        )
        .unwrap();
        assert!(coverage_problems(&record, &case).is_empty());
        let patient_turns = record
            .messages
            .iter()
            .filter(|m| m.role == ChatRole::Patient)
            .count();
        assert_eq!(patient_turns, chunks.len());
        assert_eq!(llm.mock_calls(), Some(chunks.len() as u64));
    }

    #[test]
    fn turnwise_needed_list_shrinks_across_prompts() {
        let (kb, case) = sample_valid_case(29);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let profile = build_profile(&case, None, &mut rng, &templates()).unwrap();
        let mut script = MockScript::default();
        let chunks: Vec<Vec<CaseEntry>> = case
            .findings
            .entries
            .chunks(2)
            .map(|c| c.to_vec())
            .collect();
        for chunk in &chunks {
            script.push_ordinal(scripting::scripted_turn_reply(&kb, chunk));
        }
        let llm = LlmHandle::mock(script);
        let mut bank = PhraseBank::new();
        generate_chat_turnwise(&kb, "case-1", &case, &profile, &llm, &mut bank, &templates())
            .unwrap();
        let prompts = llm.mock_requests().unwrap();
        let needed_counts: Vec<usize> = prompts
            .iter()
            .map(|p| {
                let needed = p
                    .split("Findings that still need to be added:")
                    .nth(1)
                    .unwrap()
                    .split("Previously used patient phrasings")
                    .next()
                    .unwrap();
                needed.matches("\n- ").count()
            })
            .collect();
        assert!(
            needed_counts.windows(2).all(|w| w[0] > w[1]),
            "needed counts must strictly shrink: {needed_counts:?}"
        );
        assert_eq!(needed_counts[0], case.findings.len());
    }

    #[test]
    fn turnwise_stops_at_cap_and_leaves_shortfall_to_checker() {
        let (kb, case) = sample_valid_case(30);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let profile = build_profile(&case, None, &mut rng, &templates()).unwrap();
        // Every turn repeats the same single finding, so the rest are never
        // covered and the loop must hit the cap.
        let first = case.findings.entries[0].clone();
        let mut script = MockScript::default();
        for _ in 0..turn_cap(&case) {
            script.push_ordinal(scripting::scripted_turn_reply(&kb, std::slice::from_ref(&first)));
        }
        let llm = LlmHandle::mock(script);
        let mut bank = PhraseBank::new();
        let record = generate_chat_turnwise(
            &kb, "case-1", &case, &profile, &llm, &mut bank, &templates(),
        )
        .unwrap();
        assert_eq!(llm.mock_calls(), Some(turn_cap(&case) as u64));
        let problems = coverage_problems(&record, &case);
        assert!(!problems.is_empty(), "record must be flagged for repair");
        assert!(!record.meta.discarded);
    }

    #[test]
    fn verify_leaves_complete_chat_untouched() {
        let (kb, case) = sample_valid_case(31);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let profile = build_profile(&case, None, &mut rng, &templates()).unwrap();
        let reply = scripting::scripted_chat_reply(&kb, &case);
        let llm = LlmHandle::mock(MockScript::always(reply));
        let mut bank = PhraseBank::new();
        let record = generate_chat_single(
            &kb, "case-1", &case, &profile, &llm, &mut bank, &templates(),
        )
        .unwrap();
        let checker = LlmHandle::mock(MockScript::default());
        let verified =
            verify_and_repair(&kb, record.clone(), &case, &checker, &templates()).unwrap();
        assert_eq!(verified, record);
        assert_eq!(checker.mock_calls(), Some(0));
    }

    #[test]
    fn repair_fixing_gap_on_first_edit_is_retained() {
        let (kb, case) = sample_valid_case(32);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let profile = build_profile(&case, None, &mut rng, &templates()).unwrap();
        // Generate from a script that omits the final finding.
        let partial: Vec<CaseEntry> =
            case.findings.entries[..case.findings.len() - 1].to_vec();
        let short_case = StructuredCase {
            findings: CaseFindings::new(partial),
            ..case.clone()
        };
        let gen_llm = LlmHandle::mock(MockScript::always(scripting::scripted_chat_reply(
            &kb,
            &short_case,
        )));
        let mut bank = PhraseBank::new();
        let record = generate_chat_single(
            &kb, "case-1", &case, &profile, &gen_llm, &mut bank, &templates(),
        )
        .unwrap();
        assert!(!coverage_problems(&record, &case).is_empty());
        let checker = LlmHandle::mock(MockScript::always(scripting::scripted_chat_reply(
            &kb, &case,
        )));
        let repaired = verify_and_repair(&kb, record, &case, &checker, &templates()).unwrap();
        assert!(!repaired.meta.discarded);
        assert_eq!(repaired.meta.repair_attempts, 1);
        assert!(coverage_problems(&repaired, &case).is_empty());
    }

    #[test]
    fn three_failed_edits_discard_the_chat() {
        let (kb, case) = sample_valid_case(33);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let profile = build_profile(&case, None, &mut rng, &templates()).unwrap();
        let partial: Vec<CaseEntry> =
            case.findings.entries[..case.findings.len() - 1].to_vec();
        let short_case = StructuredCase {
            findings: CaseFindings::new(partial),
            ..case.clone()
        };
        let bad_reply = scripting::scripted_chat_reply(&kb, &short_case);
        let gen_llm = LlmHandle::mock(MockScript::always(bad_reply.clone()));
        let mut bank = PhraseBank::new();
        let record = generate_chat_single(
            &kb, "case-1", &case, &profile, &gen_llm, &mut bank, &templates(),
        )
        .unwrap();
        // Checker keeps producing the same incomplete chat.
        let mut script = MockScript::default();
        for _ in 0..3 {
            script.push_ordinal(bad_reply.clone());
        }
        let checker = LlmHandle::mock(script);
        let repaired = verify_and_repair(&kb, record, &case, &checker, &templates()).unwrap();
        assert!(repaired.meta.discarded);
        assert_eq!(repaired.meta.repair_attempts, 3);
        assert_eq!(checker.mock_calls(), Some(3));
    }

    #[test]
    fn over_limit_patient_message_is_a_repair_problem() {
        let (_kb, case) = sample_valid_case(34);
        assert!(case.findings.len() >= 4);
        let four = &case.findings.entries[..4];
        let findings_line: Vec<String> = four
            .iter()
            .map(|e| format!("{}={}", e.finding, polarity_word(e.polarity)))
            .collect();
        let reply = format!(
            "<chat>\nprovider: q\npatient: a lot at once\nfindings: {}\n</chat>",
            findings_line.join("; ")
        );
        let messages = transcript::parse_chat_block(&reply, &case.findings).unwrap();
        let record = ChatRecord {
            case_id: "c".into(),
            seed_disease: case.seed_disease.clone(),
            messages: {
                let mut m = vec![ChatMessage {
                    role: ChatRole::System,
                    text: "Patient is Pat.".into(),
                    findings: Vec::new(),
                }];
                m.extend(messages);
                m
            },
            meta: ChatMeta {
                model: "mock".into(),
                mode: ChatMode::Single,
                repair_attempts: 0,
                discarded: false,
            },
        };
        let problems = coverage_problems(&record, &case);
        assert_eq!(problems.over_limit, vec![2]);
    }
}
