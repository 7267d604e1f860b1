//! Differential-diagnosis and candidate-generation evaluation: the fusion
//! prompt with optional candidate injection, candidate backends, ranking
//! metrics, LLM judges, significance testing, and category breakdowns.

pub mod judge;
pub mod metrics;
pub mod wilcoxon;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::kb::{DiseaseId, KnowledgeBase};
use crate::llm::template::{vars, TemplateSet};
use crate::llm::{ChatTurnRequest, LlmError, LlmHandle};
use crate::scorer::{rank_ddx, CaseFindings, ScoreError, ScoreWeights, DDX_CAP};

pub use judge::{judge_binary, judge_similarity, SimilarityLabel};
pub use metrics::{names_match, normalize_name, topk_mrr, Matcher, RankMetrics};
pub use wilcoxon::{wilcoxon_signed_rank, wilcoxon_signed_rank_with, WilcoxonMethod};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{predictions} predictions but {golds} golds")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("only {nonzero} nonzero difference(s); at least 5 required")]
    TooFewNonzeroDifferences { nonzero: usize },
    #[error("unparseable verdict: expected {expected}, got {got:?}")]
    UnparseableVerdict { expected: &'static str, got: String },
    #[error("unparseable ddx list: {0}")]
    UnparseableList(String),
    #[error("candidate list has {0} entries; the cap is {DDX_CAP}")]
    TooManyCandidates(usize),
    #[error("duplicate candidate after case folding: {0:?}")]
    DuplicateCandidate(String),
    #[error("reference backend requires structured findings")]
    MissingFindings,
    #[error("unknown disease {0}")]
    UnknownDisease(DiseaseId),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

/// Ranked rare-disease names proposed for a record, at most five, no
/// case-folded duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidateList {
    names: Vec<String>,
}

impl CandidateList {
    pub fn new(names: Vec<String>) -> Result<Self, EvalError> {
        if names.len() > DDX_CAP {
            return Err(EvalError::TooManyCandidates(names.len()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &names {
            if !seen.insert(normalize_name(name)) {
                return Err(EvalError::DuplicateCandidate(name.clone()));
            }
        }
        Ok(CandidateList { names })
    }

    /// Dedup (case-folded, keeping first occurrences) and truncate to the cap.
    pub fn from_raw(names: impl IntoIterator<Item = String>) -> Self {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        for name in names {
            let key = normalize_name(&name);
            if key.is_empty() || !seen.insert(key) {
                continue;
            }
            out.push(name);
            if out.len() == DDX_CAP {
                break;
            }
        }
        CandidateList { names: out }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }
}

// ---------------------------------------------------------------------------
// Candidate generation
// ---------------------------------------------------------------------------

/// Where candidate lists come from: the expert-system scorer itself, or an
/// externally served model reached through the gateway.
pub enum CandidateBackend<'a> {
    Reference {
        kb: &'a KnowledgeBase,
        weights: &'a ScoreWeights,
    },
    External {
        llm: &'a LlmHandle,
    },
}

/// Inputs a candidate backend may draw on.
#[derive(Debug, Clone, Default)]
pub struct CandidateInput<'a> {
    pub findings: Option<&'a CaseFindings>,
    pub chat_text: Option<&'a str>,
}

pub fn generate_candidates(
    backend: &CandidateBackend<'_>,
    input: &CandidateInput<'_>,
) -> Result<CandidateList, EvalError> {
    match backend {
        CandidateBackend::Reference { kb, weights } => {
            let findings = input.findings.ok_or(EvalError::MissingFindings)?;
            reference_candidates(kb, weights, findings)
        }
        CandidateBackend::External { llm } => {
            let chat_text = input.chat_text.ok_or(EvalError::EmptyInput)?;
            external_candidates(llm, chat_text)
        }
    }
}

/// Candidates straight from the diagnostic scorer: names of the ranked
/// differential over the structured findings.
pub fn reference_candidates(
    kb: &KnowledgeBase,
    weights: &ScoreWeights,
    findings: &CaseFindings,
) -> Result<CandidateList, EvalError> {
    let ddx = rank_ddx(kb, weights, findings, DDX_CAP)?;
    let names: Vec<String> = ddx
        .entries
        .iter()
        .map(|e| {
            kb.disease_name(&e.disease)
                .map(str::to_string)
                .ok_or_else(|| EvalError::UnknownDisease(e.disease.clone()))
        })
        .collect::<Result<_, _>>()?;
    Ok(CandidateList::from_raw(names))
}

/// Candidates from a served model: plain chat text in, a `<ddx>` list out.
pub fn external_candidates(
    llm: &LlmHandle,
    chat_text: &str,
) -> Result<CandidateList, EvalError> {
    let request = ChatTurnRequest::system_user(
        "From the following history-taking conversation, list up to 5 rare \
         diseases the patient may have, most likely first, inside a <ddx> \
         block with one numbered name per line.",
        chat_text,
    );
    let response = llm.complete(&request)?;
    let (names, _) = parse_ddx_list(&response.text)?;
    Ok(CandidateList::from_raw(names))
}

// ---------------------------------------------------------------------------
// Final DDx generation
// ---------------------------------------------------------------------------

/// One entry of a model-produced differential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdxItem {
    pub name: String,
    /// True when the entry matches an injected candidate name.
    pub from_candidates: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdxResult {
    pub entries: Vec<DdxItem>,
    pub raw: String,
    /// Set when the model emitted more than five entries.
    pub truncated: bool,
}

impl DdxResult {
    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }
}

/// Render the multi-stage fusion prompt. With candidates, the candidate
/// stages are spliced in with the names verbatim; without, the rendered
/// prompt contains no trace of the candidate section.
pub fn build_ddx_prompt(
    templates: &TemplateSet,
    chat_text: &str,
    candidates: Option<&CandidateList>,
) -> Result<String, EvalError> {
    if chat_text.trim().is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let candidate_section = match candidates {
        None => String::new(),
        Some(list) => {
            let block = list
                .names()
                .iter()
                .enumerate()
                .map(|(i, name)| format!("{}. {}", i + 1, name))
                .collect::<Vec<_>>()
                .join("\n");
            templates
                .ddx_candidate_section
                .render(&vars([("candidate_block", block.as_str())]))?
        }
    };
    Ok(templates.ddx.render(&vars([
        ("chat_text", chat_text),
        ("candidate_section", candidate_section.as_str()),
    ]))?)
}

/// Parse a numbered `<ddx>` block; returns the names and whether the list
/// overflowed the cap.
pub fn parse_ddx_list(text: &str) -> Result<(Vec<String>, bool), EvalError> {
    let body = crate::chat::transcript::fenced_block(text, "ddx")
        .map_err(|e| EvalError::UnparseableList(e.to_string()))?;
    let mut names = Vec::new();
    for line in body.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let name = line
            .trim_start_matches(|c: char| c.is_ascii_digit())
            .trim_start_matches(['.', ')', '-'])
            .trim();
        if name.is_empty() {
            return Err(EvalError::UnparseableList(format!(
                "entry line {line:?} has no name"
            )));
        }
        names.push(name.to_string());
    }
    if names.is_empty() {
        return Err(EvalError::UnparseableList("ddx block is empty".into()));
    }
    let truncated = names.len() > DDX_CAP;
    names.truncate(DDX_CAP);
    Ok((names, truncated))
}

/// Run the DDx model over a chat, with or without candidate injection, and
/// parse its final list. Entries matching a candidate name are flagged.
pub fn run_ddx(
    llm: &LlmHandle,
    templates: &TemplateSet,
    chat_text: &str,
    candidates: Option<&CandidateList>,
) -> Result<DdxResult, EvalError> {
    let prompt = build_ddx_prompt(templates, chat_text, candidates)?;
    let response = llm.complete(&ChatTurnRequest::user(prompt))?;
    let (names, truncated) = parse_ddx_list(&response.text)?;
    let entries = names
        .into_iter()
        .map(|name| {
            let from_candidates = candidates
                .map(|c| c.names().iter().any(|cand| names_match(cand, &name)))
                .unwrap_or(false);
            DdxItem {
                name,
                from_candidates,
            }
        })
        .collect();
    Ok(DdxResult {
        entries,
        raw: response.text,
        truncated,
    })
}

// ---------------------------------------------------------------------------
// Category breakdown and reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: String,
    pub n: usize,
    pub top1: f64,
    pub top5: f64,
    pub mrr: f64,
}

/// Per-category metrics; a result contributes to every category of its
/// seed disease, so category counts can exceed the result count.
pub fn category_breakdown(
    results: &[(DiseaseId, Option<usize>)],
    kb: &KnowledgeBase,
) -> Result<Vec<CategoryRow>, EvalError> {
    let mut buckets: BTreeMap<String, Vec<Option<usize>>> = BTreeMap::new();
    for (disease, rank) in results {
        let entry = kb
            .disease(disease)
            .ok_or_else(|| EvalError::UnknownDisease(disease.clone()))?;
        for category in &entry.categories {
            buckets.entry(category.clone()).or_default().push(*rank);
        }
    }
    Ok(buckets
        .into_iter()
        .map(|(category, ranks)| {
            let m = RankMetrics::from_ranks(ranks);
            CategoryRow {
                category,
                n: m.n,
                top1: m.top1,
                top5: m.top5,
                mrr: m.mrr,
            }
        })
        .collect())
}

/// Full evaluation report for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub top1: f64,
    pub top5: f64,
    pub mrr: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub label_distribution: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_category: Vec<CategoryRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value_vs_baseline: Option<f64>,
}

impl EvalReport {
    pub fn from_metrics(metrics: &RankMetrics) -> Self {
        EvalReport {
            n: metrics.n,
            top1: metrics.top1,
            top5: metrics.top5,
            mrr: metrics.mrr,
            label_distribution: BTreeMap::new(),
            per_category: Vec::new(),
            p_value_vs_baseline: None,
        }
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "n = {}\ntop-1 = {:.4}\ntop-5 = {:.4}\nmrr = {:.4}\n",
            self.n, self.top1, self.top5, self.mrr
        ));
        if let Some(p) = self.p_value_vs_baseline {
            out.push_str(&format!("wilcoxon p vs baseline = {p:.6}\n"));
        }
        if !self.label_distribution.is_empty() {
            out.push_str("judge labels:\n");
            for (label, count) in &self.label_distribution {
                out.push_str(&format!("  {label}: {count}\n"));
            }
        }
        if !self.per_category.is_empty() {
            out.push_str("per category:\n");
            for row in &self.per_category {
                out.push_str(&format!(
                    "  {:<45} n={:<4} top1={:.3} top5={:.3} mrr={:.3}\n",
                    row.category, row.n, row.top1, row.top5, row.mrr
                ));
            }
        }
        out
    }
}
