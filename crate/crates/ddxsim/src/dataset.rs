//! Corpus persistence, stratified splitting with dedup, statistics, and
//! training-pair export.
//!
//! Everything on disk is JSON lines, one record per line, UTF-8, with
//! stable key order, so outputs diff cleanly and re-runs are byte-identical
//! (timestamps aside).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::chat::{transcript, ChatRecord};
use crate::kb::{DiseaseId, KnowledgeBase};
use crate::scorer::{CaseEntry, Polarity};
use crate::sim::{SimTrace, StructuredCase};

/// One simulated case on disk, with its trace and rng provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub id: String,
    pub case: StructuredCase,
    pub trace: SimTrace,
    pub rng_seed: u64,
}

impl CaseRecord {
    pub fn case_id(disease: &DiseaseId, attempt: u32) -> String {
        format!("{disease}-a{attempt:03}")
    }
}

/// A retained chat joined with its case; the unit the splits operate on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub case: StructuredCase,
    pub chat: ChatRecord,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator_model: String,
    pub rng_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at_unix: Option<u64>,
}

impl CorpusRecord {
    pub fn check(&self) -> Result<(), DatasetError> {
        if self.chat.meta.discarded {
            return Err(DatasetError::DiscardedChat(self.id.clone()));
        }
        if self.chat.case_id != self.id {
            return Err(DatasetError::CaseMismatch {
                record: self.id.clone(),
                chat_case: self.chat.case_id.clone(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    /// Train/val/test fractions; must be positive and sum to 1.
    pub ratios: (f64, f64, f64),
    pub rng_seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: (0.7, 0.15, 0.15),
            rng_seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn check(&self) -> Result<(), DatasetError> {
        let (a, b, c) = self.ratios;
        if a <= 0.0 || b <= 0.0 || c <= 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(DatasetError::DegenerateRatios(self.ratios));
        }
        Ok(())
    }
}

/// Split output. `dropped` holds the train records removed because their
/// structured case collides with a val/test case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub train: Vec<CorpusRecord>,
    pub val: Vec<CorpusRecord>,
    pub test: Vec<CorpusRecord>,
    pub dropped: Vec<CorpusRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("empty input")]
    EmptyInput,
    #[error("degenerate split ratios {0:?}")]
    DegenerateRatios((f64, f64, f64)),
    #[error("record {0} holds a discarded chat")]
    DiscardedChat(String),
    #[error("record {record} embeds chat for case {chat_case}")]
    CaseMismatch { record: String, chat_case: String },
    #[error("unknown disease {0} in ddx")]
    UnknownDisease(DiseaseId),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad record on line {line} of {path}: {detail}")]
    BadLine {
        path: String,
        line: usize,
        detail: String,
    },
}

/// Structured-case identity for dedup: the seed disease plus the multiset
/// of (finding, polarity) pairs. Sampling order is deliberately ignored.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CaseKey {
    seed: DiseaseId,
    entries: Vec<CaseEntry>,
}

pub fn case_key(case: &StructuredCase) -> CaseKey {
    let mut entries = case.findings.entries.clone();
    entries.sort();
    CaseKey {
        seed: case.seed_disease.clone(),
        entries,
    }
}

/// Stratified split by seed disease, then exact-case dedup of train against
/// val and test. Within each stratum the assignment is a seeded shuffle;
/// every disease with at least three records keeps at least one train
/// record (before dedup drops).
pub fn split_corpus(
    records: Vec<CorpusRecord>,
    spec: &SplitSpec,
) -> Result<SplitResult, DatasetError> {
    spec.check()?;
    if records.is_empty() {
        return Err(DatasetError::EmptyInput);
    }

    let mut strata: BTreeMap<DiseaseId, Vec<usize>> = BTreeMap::new();
    for (i, record) in records.iter().enumerate() {
        strata
            .entry(record.case.seed_disease.clone())
            .or_default()
            .push(i);
    }

    let (_, val_ratio, test_ratio) = spec.ratios;
    let mut assignment: Vec<u8> = vec![0; records.len()]; // 0 train, 1 val, 2 test
    for (disease, mut indices) in strata {
        let mut rng = ChaCha8Rng::seed_from_u64(
            spec.rng_seed ^ fnv1a(disease.as_str().as_bytes()),
        );
        indices.shuffle(&mut rng);
        let n = indices.len();
        let mut n_val = (n as f64 * val_ratio).round() as usize;
        let mut n_test = (n as f64 * test_ratio).round() as usize;
        while n_val + n_test >= n && n >= 3 {
            if n_val >= n_test && n_val > 0 {
                n_val -= 1;
            } else if n_test > 0 {
                n_test -= 1;
            } else {
                break;
            }
        }
        if n_val + n_test > n {
            n_test = n.saturating_sub(n_val);
        }
        for (pos, index) in indices.into_iter().enumerate() {
            assignment[index] = if pos < n_val {
                1
            } else if pos < n_val + n_test {
                2
            } else {
                0
            };
        }
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (record, slot) in records.into_iter().zip(&assignment) {
        match slot {
            1 => val.push(record),
            2 => test.push(record),
            _ => train.push(record),
        }
    }

    let held_out: BTreeSet<CaseKey> = val
        .iter()
        .chain(test.iter())
        .map(|r| case_key(&r.case))
        .collect();
    let (train, dropped): (Vec<_>, Vec<_>) = train
        .into_iter()
        .partition(|r| !held_out.contains(&case_key(&r.case)));

    Ok(SplitResult {
        train,
        val,
        test,
        dropped,
    })
}

fn fnv1a(data: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &byte in data {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub n: usize,
    pub findings_mean: f64,
    pub findings_std: f64,
    pub messages_mean: f64,
    pub messages_std: f64,
}

/// Mean and population standard deviation (divide by n) of findings and
/// message counts for one split.
pub fn split_stats(records: &[CorpusRecord]) -> Result<SplitStats, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    let findings: Vec<f64> = records
        .iter()
        .map(|r| r.case.findings.len() as f64)
        .collect();
    let messages: Vec<f64> = records
        .iter()
        .map(|r| r.chat.messages.len() as f64)
        .collect();
    let (findings_mean, findings_std) = mean_std(&findings);
    let (messages_mean, messages_std) = mean_std(&messages);
    Ok(SplitStats {
        n: records.len(),
        findings_mean,
        findings_std,
        messages_mean,
        messages_std,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Stats for every named split, plus a two-decimal text rendering.
pub fn corpus_stats(
    splits: &[(&str, &[CorpusRecord])],
) -> Result<BTreeMap<String, SplitStats>, DatasetError> {
    let mut out = BTreeMap::new();
    for (name, records) in splits {
        out.insert(name.to_string(), split_stats(records)?);
    }
    Ok(out)
}

pub fn render_stats(stats: &BTreeMap<String, SplitStats>) -> String {
    let mut out = String::from("split      size  findings        messages\n");
    for (name, s) in stats {
        out.push_str(&format!(
            "{:<9} {:>5}  {:>6.2} ± {:<5.2}  {:>6.2} ± {:<5.2}\n",
            name, s.n, s.findings_mean, s.findings_std, s.messages_mean, s.messages_std
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Training pairs
// ---------------------------------------------------------------------------

/// One candidate-generator training example: plain chat text in, ranked
/// disease names out. The input carries no finding ids and no annotation
/// blocks; the target keeps expert-system score order but not the scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub input: String,
    pub target: Vec<String>,
}

pub fn training_pair(
    kb: &KnowledgeBase,
    record: &CorpusRecord,
) -> Result<TrainingPair, DatasetError> {
    let mut target = Vec::new();
    for entry in &record.case.ddx.entries {
        let name = kb
            .disease_name(&entry.disease)
            .ok_or_else(|| DatasetError::UnknownDisease(entry.disease.clone()))?;
        target.push(name.to_string());
    }
    Ok(TrainingPair {
        input: transcript::render_plain(&record.chat.messages),
        target,
    })
}

/// Write one `TrainingPair` per record as JSON lines; returns the count.
pub fn export_training_pairs(
    kb: &KnowledgeBase,
    records: &[CorpusRecord],
    path: impl AsRef<Path>,
) -> Result<usize, DatasetError> {
    let pairs: Result<Vec<TrainingPair>, _> =
        records.iter().map(|r| training_pair(kb, r)).collect();
    let pairs = pairs?;
    write_jsonl(path, &pairs)?;
    Ok(pairs.len())
}

// ---------------------------------------------------------------------------
// JSONL I/O
// ---------------------------------------------------------------------------

pub fn write_jsonl<T: Serialize>(
    path: impl AsRef<Path>,
    records: &[T],
) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for record in records {
        let line = serde_json::to_string(record).expect("record serializes");
        file.write_all(line.as_bytes()).map_err(io_err)?;
        file.write_all(b"\n").map_err(io_err)?;
    }
    file.flush().map_err(io_err)?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, DatasetError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| DatasetError::BadLine {
            path: path.display().to_string(),
            line: i + 1,
            detail: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Polarity as it appears in text renderings.
pub fn polarity_label(polarity: Polarity) -> &'static str {
    match polarity {
        Polarity::Present => "present",
        Polarity::Absent => "absent",
    }
}
