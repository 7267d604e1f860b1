//! Ranking metrics: Top-1, Top-5, and mean reciprocal rank over capped
//! candidate lists.
//!
//! Name matching is case-folded, whitespace-normalized full-string
//! equality; a knowledge-base name embedding " alias " matches on either
//! side of the alias.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::llm::LlmHandle;
use crate::scorer::DDX_CAP;

/// Case-fold and collapse internal whitespace.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// The normalized variants a name answers to: the whole string plus each
/// side of any " alias " separators.
pub fn name_variants(name: &str) -> Vec<String> {
    let normalized = normalize_name(name);
    let mut variants = vec![normalized.clone()];
    if normalized.contains(" alias ") {
        for part in normalized.split(" alias ") {
            let part = part.trim();
            if !part.is_empty() {
                variants.push(part.to_string());
            }
        }
    }
    variants
}

/// Exact-match rule: any variant of one name equals any variant of the other.
pub fn names_match(a: &str, b: &str) -> bool {
    let va = name_variants(a);
    let vb = name_variants(b);
    va.iter().any(|x| vb.contains(x))
}

/// Rank (1-based, capped at 5) of the first prediction matching the gold.
pub fn exact_match_rank(prediction: &[String], gold: &str) -> Option<usize> {
    prediction
        .iter()
        .take(DDX_CAP)
        .position(|name| names_match(name, gold))
        .map(|i| i + 1)
}

/// How predicted lists are matched against gold names.
pub enum Matcher<'a> {
    /// Case-folded, alias-aware full-string equality.
    Exact,
    /// LLM binary judge, first match in rank order.
    Judge(&'a LlmHandle),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub n: usize,
    pub top1: f64,
    pub top5: f64,
    pub mrr: f64,
    /// Per-instance matched rank (1-based), None when the gold never appears.
    pub match_ranks: Vec<Option<usize>>,
}

impl RankMetrics {
    /// Reciprocal ranks, 1/r for a match at rank r and 0 otherwise.
    pub fn reciprocal_ranks(&self) -> Vec<f64> {
        self.match_ranks
            .iter()
            .map(|r| r.map(|rank| 1.0 / rank as f64).unwrap_or(0.0))
            .collect()
    }

    pub fn from_ranks(match_ranks: Vec<Option<usize>>) -> Self {
        let n = match_ranks.len();
        let top1 = match_ranks.iter().filter(|r| **r == Some(1)).count() as f64 / n as f64;
        let top5 = match_ranks
            .iter()
            .filter(|r| r.map(|rank| rank <= DDX_CAP).unwrap_or(false))
            .count() as f64
            / n as f64;
        let mrr = match_ranks
            .iter()
            .map(|r| r.map(|rank| 1.0 / rank as f64).unwrap_or(0.0))
            .sum::<f64>()
            / n as f64;
        RankMetrics {
            n,
            top1,
            top5,
            mrr,
            match_ranks,
        }
    }
}

/// Compute Top-1 / Top-5 / MRR for ranked predictions against gold names.
pub fn topk_mrr(
    predictions: &[Vec<String>],
    golds: &[String],
    matcher: &Matcher<'_>,
) -> Result<RankMetrics, EvalError> {
    if predictions.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut match_ranks = Vec::with_capacity(predictions.len());
    for (prediction, gold) in predictions.iter().zip(golds) {
        let rank = match matcher {
            Matcher::Exact => exact_match_rank(prediction, gold),
            Matcher::Judge(llm) => super::judge::judge_binary(llm, prediction, gold)?,
        };
        match_ranks.push(rank);
    }
    Ok(RankMetrics::from_ranks(match_ranks))
}
