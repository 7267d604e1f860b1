//! LLM judges: a binary name-equivalence judge applied per differential
//! entry with first-match short circuit, and a five-level similarity judge
//! applied to the whole list at once.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::llm::template::{vars, TemplateSet};
use crate::llm::{ChatTurnRequest, LlmHandle};
use crate::scorer::DDX_CAP;

/// Ask the binary judge about each entry in rank order, stopping at the
/// first yes; returns that 1-based rank.
pub fn judge_binary(
    llm: &LlmHandle,
    ddx: &[String],
    gold_name: &str,
) -> Result<Option<usize>, EvalError> {
    let templates = TemplateSet::builtin();
    judge_binary_with(llm, &templates, ddx, gold_name)
}

pub fn judge_binary_with(
    llm: &LlmHandle,
    templates: &TemplateSet,
    ddx: &[String],
    gold_name: &str,
) -> Result<Option<usize>, EvalError> {
    for (i, candidate) in ddx.iter().take(DDX_CAP).enumerate() {
        let prompt = templates.judge_binary.render(&vars([
            ("candidate_name", candidate.as_str()),
            ("gold_name", gold_name),
        ]))?;
        let response = llm.complete(&ChatTurnRequest::user(prompt))?;
        match response.text.trim().to_lowercase().as_str() {
            "yes" => return Ok(Some(i + 1)),
            "no" => {}
            other => {
                return Err(EvalError::UnparseableVerdict {
                    expected: "yes or no",
                    got: other.chars().take(40).collect(),
                })
            }
        }
    }
    Ok(None)
}

/// Five-level similarity of a differential list to the gold diagnosis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityLabel {
    Unrelated,
    SomewhatRelated,
    Relevant,
    ExtremelyRelevant,
    ExactMatch,
}

impl SimilarityLabel {
    pub const ALL: [SimilarityLabel; 5] = [
        SimilarityLabel::Unrelated,
        SimilarityLabel::SomewhatRelated,
        SimilarityLabel::Relevant,
        SimilarityLabel::ExtremelyRelevant,
        SimilarityLabel::ExactMatch,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SimilarityLabel::Unrelated => "unrelated",
            SimilarityLabel::SomewhatRelated => "somewhat related",
            SimilarityLabel::Relevant => "relevant",
            SimilarityLabel::ExtremelyRelevant => "extremely relevant",
            SimilarityLabel::ExactMatch => "exact match",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        let cleaned = text.trim().to_lowercase();
        Self::ALL.into_iter().find(|l| l.as_str() == cleaned)
    }
}

impl fmt::Display for SimilarityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One judge call comparing the full list to the gold diagnosis.
pub fn judge_similarity(
    llm: &LlmHandle,
    ddx: &[String],
    gold_name: &str,
) -> Result<SimilarityLabel, EvalError> {
    let templates = TemplateSet::builtin();
    judge_similarity_with(llm, &templates, ddx, gold_name)
}

pub fn judge_similarity_with(
    llm: &LlmHandle,
    templates: &TemplateSet,
    ddx: &[String],
    gold_name: &str,
) -> Result<SimilarityLabel, EvalError> {
    let ddx_block = ddx
        .iter()
        .take(DDX_CAP)
        .enumerate()
        .map(|(i, name)| format!("{}. {}", i + 1, name))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = templates.judge_similarity.render(&vars([
        ("ddx_block", ddx_block.as_str()),
        ("gold_name", gold_name),
    ]))?;
    let response = llm.complete(&ChatTurnRequest::user(prompt))?;
    SimilarityLabel::parse(&response.text).ok_or_else(|| EvalError::UnparseableVerdict {
        expected: "one of the five similarity labels",
        got: response.text.trim().chars().take(40).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::mock::MockScript;

    fn ddx() -> Vec<String> {
        (1..=5).map(|i| format!("disease {i}")).collect()
    }

    #[test]
    fn first_yes_sets_the_rank() {
        let mut script = MockScript::default();
        script.push_ordinal("no");
        script.push_ordinal("no");
        script.push_ordinal("yes");
        let llm = LlmHandle::mock(script);
        assert_eq!(judge_binary(&llm, &ddx(), "gold").unwrap(), Some(3));
    }

    #[test]
    fn all_no_returns_none() {
        let mut script = MockScript::default();
        for _ in 0..5 {
            script.push_ordinal("no");
        }
        let llm = LlmHandle::mock(script);
        assert_eq!(judge_binary(&llm, &ddx(), "gold").unwrap(), None);
        assert_eq!(llm.mock_calls(), Some(5));
    }

    #[test]
    fn short_circuit_stops_calling_after_first_yes() {
        // yes at ranks 2 and 4; the judge must stop at 2 and be called twice.
        let mut script = MockScript::default();
        script.push_ordinal("no");
        script.push_ordinal("yes");
        script.push_ordinal("no");
        script.push_ordinal("yes");
        let llm = LlmHandle::mock(script);
        assert_eq!(judge_binary(&llm, &ddx(), "gold").unwrap(), Some(2));
        assert_eq!(llm.mock_calls(), Some(2));
    }

    #[test]
    fn non_token_verdict_is_unparseable() {
        let llm = LlmHandle::mock(MockScript::always("maybe?"));
        assert!(matches!(
            judge_binary(&llm, &ddx(), "gold"),
            Err(EvalError::UnparseableVerdict { .. })
        ));
    }

    #[test]
    fn similarity_label_parses_exactly() {
        let llm = LlmHandle::mock(MockScript::always("exact match"));
        assert_eq!(
            judge_similarity(&llm, &ddx(), "gold").unwrap(),
            SimilarityLabel::ExactMatch
        );
    }

    #[test]
    fn off_vocabulary_label_is_an_error() {
        let llm = LlmHandle::mock(MockScript::always("kind of related"));
        assert!(matches!(
            judge_similarity(&llm, &ddx(), "gold"),
            Err(EvalError::UnparseableVerdict { .. })
        ));
    }

    #[test]
    fn scripted_batch_matches_script_histogram() {
        let labels = [
            "unrelated",
            "exact match",
            "relevant",
            "exact match",
            "somewhat related",
            "unrelated",
            "extremely relevant",
            "exact match",
            "relevant",
            "unrelated",
        ];
        let mut script = MockScript::default();
        for label in labels {
            script.push_ordinal(label);
        }
        let llm = LlmHandle::mock(script);
        let mut tally = std::collections::BTreeMap::new();
        for _ in 0..labels.len() {
            let label = judge_similarity(&llm, &ddx(), "gold").unwrap();
            *tally.entry(label.as_str()).or_insert(0usize) += 1;
        }
        let mut expected = std::collections::BTreeMap::new();
        for label in labels {
            *expected.entry(label).or_insert(0usize) += 1;
        }
        assert_eq!(tally, expected);
    }
}
