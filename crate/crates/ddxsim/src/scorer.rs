//! Additive diagnostic scoring and differential-diagnosis ranking.
//!
//! A disease's score over a case is the sum of evoking-strength weights for
//! present linked findings, minus frequency penalties for absent linked
//! findings, minus import penalties for present findings the disease does
//! not explain. The weight tables are nonlinear lookups indexed by the 1–5
//! scale values and are configurable.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::kb::{DiseaseId, FindingId, KnowledgeBase};

/// Maximum differential-diagnosis length used throughout the pipeline.
pub const DDX_CAP: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Present,
    Absent,
}

/// One polarity-tagged finding observation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CaseEntry {
    pub finding: FindingId,
    pub polarity: Polarity,
}

impl CaseEntry {
    pub fn present(finding: impl Into<FindingId>) -> Self {
        CaseEntry {
            finding: finding.into(),
            polarity: Polarity::Present,
        }
    }

    pub fn absent(finding: impl Into<FindingId>) -> Self {
        CaseEntry {
            finding: finding.into(),
            polarity: Polarity::Absent,
        }
    }
}

/// Ordered polarity-tagged findings; order is the sampling order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CaseFindings {
    pub entries: Vec<CaseEntry>,
}

impl CaseFindings {
    pub fn new(entries: Vec<CaseEntry>) -> Self {
        CaseFindings { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &CaseEntry> {
        self.entries.iter()
    }

    pub fn polarity_of(&self, finding: &FindingId) -> Option<Polarity> {
        self.entries
            .iter()
            .find(|e| &e.finding == finding)
            .map(|e| e.polarity)
    }

    /// Check the structural invariants: no repeated finding and at most one
    /// present finding per exclusion group.
    pub fn check(&self, kb: &KnowledgeBase) -> Result<(), ScoreError> {
        let mut seen = BTreeSet::new();
        let mut present_groups = BTreeSet::new();
        for entry in &self.entries {
            if !seen.insert(&entry.finding) {
                return Err(ScoreError::DuplicateFinding(entry.finding.clone()));
            }
            let finding = kb
                .finding(&entry.finding)
                .ok_or_else(|| ScoreError::UnknownFinding(entry.finding.clone()))?;
            if entry.polarity == Polarity::Present {
                if let Some(group) = &finding.exclusion_group {
                    if !present_groups.insert(group.clone()) {
                        return Err(ScoreError::ExclusionViolated {
                            group: group.clone(),
                            finding: entry.finding.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

impl FromIterator<CaseEntry> for CaseFindings {
    fn from_iter<T: IntoIterator<Item = CaseEntry>>(iter: T) -> Self {
        CaseFindings {
            entries: iter.into_iter().collect(),
        }
    }
}

/// Weight tables indexed by scale value 1–5. Each table must be strictly
/// increasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreWeights {
    pub es_weight: [u32; 5],
    pub freq_penalty: [u32; 5],
    pub import_penalty: [u32; 5],
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            es_weight: [1, 4, 10, 20, 40],
            freq_penalty: [1, 4, 7, 18, 40],
            import_penalty: [2, 6, 10, 20, 40],
        }
    }
}

impl ScoreWeights {
    pub fn es(&self, strength: u8) -> i64 {
        self.es_weight[(strength - 1) as usize] as i64
    }

    pub fn freq(&self, frequency: u8) -> i64 {
        self.freq_penalty[(frequency - 1) as usize] as i64
    }

    pub fn import(&self, import: u8) -> i64 {
        self.import_penalty[(import - 1) as usize] as i64
    }

    pub fn check(&self) -> Result<(), ScoreError> {
        for (name, table) in [
            ("es_weight", &self.es_weight),
            ("freq_penalty", &self.freq_penalty),
            ("import_penalty", &self.import_penalty),
        ] {
            if !table.windows(2).all(|w| w[0] < w[1]) {
                return Err(ScoreError::WeightsNotIncreasing(name.to_string()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DdxEntry {
    pub disease: DiseaseId,
    pub score: i64,
}

/// Ranked differential, at most [`DDX_CAP`] entries, non-increasing score,
/// ties broken by ascending disease id.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankedDdx {
    pub entries: Vec<DdxEntry>,
}

impl RankedDdx {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn diseases(&self) -> impl Iterator<Item = &DiseaseId> {
        self.entries.iter().map(|e| &e.disease)
    }

    pub fn top(&self) -> Option<&DdxEntry> {
        self.entries.first()
    }

    /// True when `disease` holds rank 1 with a strictly greater score than
    /// every other entry.
    pub fn is_strict_top(&self, disease: &DiseaseId) -> bool {
        match self.entries.as_slice() {
            [] => false,
            [first] => &first.disease == disease,
            [first, second, ..] => &first.disease == disease && second.score < first.score,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("unknown disease {0}")]
    UnknownDisease(DiseaseId),
    #[error("unknown finding {0}")]
    UnknownFinding(FindingId),
    #[error("finding {0} appears twice in the case")]
    DuplicateFinding(FindingId),
    #[error("exclusion group {group} has more than one present finding ({finding})")]
    ExclusionViolated { group: String, finding: FindingId },
    #[error("weight table {0} is not strictly increasing")]
    WeightsNotIncreasing(String),
}

/// Score one disease against a case. Pure and deterministic.
pub fn score_disease(
    kb: &KnowledgeBase,
    weights: &ScoreWeights,
    case: &CaseFindings,
    disease_id: &DiseaseId,
) -> Result<i64, ScoreError> {
    let disease = kb
        .disease(disease_id)
        .ok_or_else(|| ScoreError::UnknownDisease(disease_id.clone()))?;
    let mut score = 0i64;
    for entry in case.iter() {
        let finding = kb
            .finding(&entry.finding)
            .ok_or_else(|| ScoreError::UnknownFinding(entry.finding.clone()))?;
        match (disease.links.get(&entry.finding), entry.polarity) {
            (Some(link), Polarity::Present) => score += weights.es(link.evoking_strength),
            (Some(link), Polarity::Absent) => score -= weights.freq(link.frequency),
            (None, Polarity::Present) => score -= weights.import(finding.import),
            (None, Polarity::Absent) => {}
        }
    }
    Ok(score)
}

/// Score every disease in the knowledge base (closed world) and return the
/// top `max_n` with positive score, ordered by score descending then disease
/// id ascending.
pub fn rank_ddx(
    kb: &KnowledgeBase,
    weights: &ScoreWeights,
    case: &CaseFindings,
    max_n: usize,
) -> Result<RankedDdx, ScoreError> {
    let mut scored = Vec::with_capacity(kb.diseases.len());
    for id in kb.diseases.keys() {
        let score = score_disease(kb, weights, case, id)?;
        if score > 0 {
            scored.push(DdxEntry {
                disease: id.clone(),
                score,
            });
        }
    }
    scored.sort_by(|a, b| b.score.cmp(&a.score).then_with(|| a.disease.cmp(&b.disease)));
    scored.truncate(max_n);
    Ok(RankedDdx { entries: scored })
}
