//! Structured-case simulation.
//!
//! For a seed disease, a case is sampled phase by phase: demographic
//! findings first (exactly one made present per demographic exclusion
//! group), then predisposing factors, then symptoms, both in descending
//! link frequency. Every non-demographic finding is rolled present with a
//! probability driven by its frequency. After a fixed number of findings a
//! checkpoint differential is computed and findings shared between the seed
//! and its current competitors are pulled forward with a bias toward
//! absent, widening the seed's margin. A case is kept only when the seed
//! disease strictly tops the final differential; a disease is kept only
//! when enough attempts survive that gate.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kb::{DiseaseId, FindingId, FindingKind, KnowledgeBase};
use crate::scorer::{
    rank_ddx, CaseEntry, CaseFindings, Polarity, RankedDdx, ScoreError, ScoreWeights, DDX_CAP,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub rng_seed: u64,
    /// Probability a finding is rolled present, indexed by link frequency 1–5.
    pub present_prob: [f64; 5],
    pub max_attempts: u32,
    /// Minimum valid cases out of `max_attempts`; below this the disease is excluded.
    pub min_valid: u32,
    /// Number of sampled findings after which the checkpoint differential runs.
    pub ddx_checkpoint_after: usize,
    pub max_findings: usize,
    pub min_findings: usize,
    /// Multiplier applied to the present probability of checkpoint-prioritized
    /// findings, biasing them toward absent.
    pub absent_bias: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            rng_seed: 0,
            present_prob: [0.15, 0.30, 0.50, 0.75, 0.90],
            max_attempts: 200,
            min_valid: 50,
            ddx_checkpoint_after: 6,
            max_findings: 20,
            min_findings: 8,
            absent_bias: 0.5,
        }
    }
}

impl SimConfig {
    pub fn check(&self) -> Result<(), SimError> {
        if self.present_prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(SimError::BadConfig("present_prob outside [0, 1]".into()));
        }
        if self.min_valid > self.max_attempts {
            return Err(SimError::BadConfig(format!(
                "min_valid {} exceeds max_attempts {}",
                self.min_valid, self.max_attempts
            )));
        }
        if self.ddx_checkpoint_after == 0 {
            return Err(SimError::BadConfig("ddx_checkpoint_after must be >= 1".into()));
        }
        if self.min_findings > self.max_findings {
            return Err(SimError::BadConfig(format!(
                "min_findings {} exceeds max_findings {}",
                self.min_findings, self.max_findings
            )));
        }
        if !(0.0..=1.0).contains(&self.absent_bias) {
            return Err(SimError::BadConfig("absent_bias outside [0, 1]".into()));
        }
        Ok(())
    }

    fn prob(&self, frequency: u8) -> f64 {
        self.present_prob[(frequency - 1) as usize]
    }
}

/// A validated simulated case: the seed disease strictly tops its final
/// differential under the same weights used while sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredCase {
    pub seed_disease: DiseaseId,
    pub findings: CaseFindings,
    pub ddx: RankedDdx,
    /// Slot -> value for slots fixed by present demographic findings,
    /// keyed by exclusion group (e.g. "sex" -> "sex male").
    pub demographics: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSnapshot {
    /// Number of findings sampled when the snapshot was taken.
    pub step: usize,
    pub ddx: RankedDdx,
}

/// Differential snapshots captured at the checkpoint and at completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub snapshots: Vec<TraceSnapshot>,
    pub attempt: u32,
    /// Findings recorded absent because their exclusion group already had a
    /// present member.
    pub exclusion_skips: u32,
}

/// One kept case together with its trace and rng provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedCase {
    pub case: StructuredCase,
    pub trace: SimTrace,
}

/// Why an attempt produced no case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InvalidReason {
    /// The seed disease did not strictly top the final differential.
    SeedNotTop,
    /// Fewer findings were sampled than the configured minimum.
    TooFewFindings { sampled: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleOutcome {
    Valid(Box<SimulatedCase>),
    Invalid(InvalidReason),
}

/// Result of running all attempts for one seed disease.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DiseaseOutcome {
    /// At least `min_valid` attempts produced cases.
    Cases(Vec<SimulatedCase>),
    /// The disease fell below the validity gate and is excluded.
    Excluded { valid: u32, attempts: u32 },
}

impl DiseaseOutcome {
    pub fn cases(&self) -> &[SimulatedCase] {
        match self {
            DiseaseOutcome::Cases(cases) => cases,
            DiseaseOutcome::Excluded { .. } => &[],
        }
    }

    pub fn valid_count(&self) -> u32 {
        match self {
            DiseaseOutcome::Cases(cases) => cases.len() as u32,
            DiseaseOutcome::Excluded { valid, .. } => *valid,
        }
    }

    pub fn is_excluded(&self) -> bool {
        matches!(self, DiseaseOutcome::Excluded { .. })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("unknown seed disease {0}")]
    UnknownDisease(DiseaseId),
    #[error("invalid simulation config: {0}")]
    BadConfig(String),
    #[error("trace has {0} snapshot(s); at least 2 are required")]
    TooFewSnapshots(usize),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

/// Deterministic rng for one sampling attempt. Each (seed, disease, attempt)
/// triple gets an isolated stream so parallel and serial execution agree.
pub fn attempt_rng(rng_seed: u64, disease: &DiseaseId, attempt: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ fnv1a(disease.as_str().as_bytes()));
    rng.set_stream(u64::from(attempt) + 1);
    rng
}

fn fnv1a(data: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &byte in data {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Ordering key for non-demographic sampling: descending frequency, then
/// descending import, then ascending finding id.
fn phase_order(kb: &KnowledgeBase, ids: &mut [(FindingId, u8)]) {
    ids.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then_with(|| kb.findings[&b.0].import.cmp(&kb.findings[&a.0].import))
            .then_with(|| a.0.cmp(&b.0))
    });
}

/// Run one sampling attempt for `seed_disease`.
pub fn sample_case(
    kb: &KnowledgeBase,
    weights: &ScoreWeights,
    seed_disease: &DiseaseId,
    config: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SampleOutcome, SimError> {
    config.check()?;
    let disease = kb
        .disease(seed_disease)
        .ok_or_else(|| SimError::UnknownDisease(seed_disease.clone()))?;

    let mut entries: Vec<CaseEntry> = Vec::new();
    let mut considered: BTreeSet<FindingId> = BTreeSet::new();
    let mut present_groups: BTreeSet<String> = BTreeSet::new();
    let mut demographics: BTreeMap<String, String> = BTreeMap::new();
    let mut snapshots: Vec<TraceSnapshot> = Vec::new();
    let mut exclusion_skips = 0u32;

    // Phase 1: demographics. Exactly one present member per group the seed
    // disease links into, chosen with probability proportional to the
    // present probability of its link frequency.
    let mut demo_groups: BTreeMap<String, Vec<(FindingId, u8)>> = BTreeMap::new();
    for (fid, link) in &disease.links {
        let finding = &kb.findings[fid];
        if finding.kind == FindingKind::Demographic {
            let group = finding
                .exclusion_group
                .clone()
                .expect("demographic findings carry a group");
            demo_groups
                .entry(group)
                .or_default()
                .push((fid.clone(), link.frequency));
        }
    }
    for (group, mut members) in demo_groups {
        phase_order(kb, &mut members);
        let weights_vec: Vec<f64> = members.iter().map(|(_, freq)| config.prob(*freq)).collect();
        let total: f64 = weights_vec.iter().sum();
        let choice = if total <= 0.0 {
            rng.gen_range(0..members.len())
        } else {
            let mut roll = rng.gen::<f64>() * total;
            let mut picked = members.len() - 1;
            for (i, w) in weights_vec.iter().enumerate() {
                if roll < *w {
                    picked = i;
                    break;
                }
                roll -= w;
            }
            picked
        };
        for (i, (fid, _)) in members.iter().enumerate() {
            considered.insert(fid.clone());
            if i == choice {
                entries.push(CaseEntry::present(fid.clone()));
                present_groups.insert(group.clone());
                demographics.insert(group.clone(), kb.findings[fid].name.clone());
            }
        }
    }

    // Phases 2 and 3: predisposing factors then symptoms, descending frequency.
    let mut predisposing: Vec<(FindingId, u8)> = Vec::new();
    let mut symptoms: Vec<(FindingId, u8)> = Vec::new();
    for (fid, link) in &disease.links {
        match kb.findings[fid].kind {
            FindingKind::Predisposing => predisposing.push((fid.clone(), link.frequency)),
            FindingKind::Symptom => symptoms.push((fid.clone(), link.frequency)),
            FindingKind::Demographic => {}
        }
    }
    phase_order(kb, &mut predisposing);
    phase_order(kb, &mut symptoms);
    let mut pending: VecDeque<FindingId> = predisposing
        .into_iter()
        .chain(symptoms)
        .map(|(fid, _)| fid)
        .collect();
    let mut prioritized: VecDeque<FindingId> = VecDeque::new();
    let mut checkpoint_done = false;

    while entries.len() < config.max_findings {
        let (fid, from_priority) = match prioritized.pop_front() {
            Some(fid) => (fid, true),
            None => match pending.pop_front() {
                Some(fid) => (fid, false),
                None => break,
            },
        };
        if !considered.insert(fid.clone()) {
            continue;
        }
        let finding = &kb.findings[&fid];
        let group_blocked = finding
            .exclusion_group
            .as_ref()
            .is_some_and(|g| present_groups.contains(g));
        let polarity = if group_blocked {
            exclusion_skips += 1;
            Polarity::Absent
        } else {
            let mut p = config.prob(disease.links[&fid].frequency);
            if from_priority {
                p *= config.absent_bias;
            }
            if rng.gen::<f64>() < p {
                Polarity::Present
            } else {
                Polarity::Absent
            }
        };
        if polarity == Polarity::Present {
            if let Some(group) = &finding.exclusion_group {
                present_groups.insert(group.clone());
            }
        }
        entries.push(CaseEntry {
            finding: fid,
            polarity,
        });

        if !checkpoint_done && entries.len() >= config.ddx_checkpoint_after {
            checkpoint_done = true;
            let case = CaseFindings::new(entries.clone());
            let ddx = rank_ddx(kb, weights, &case, DDX_CAP)?;
            // Pull forward findings shared between the seed and the other
            // differential members; they sample next, biased toward absent.
            let mut shared: Vec<(FindingId, u8)> = Vec::new();
            for entry in &ddx.entries {
                if &entry.disease == seed_disease {
                    continue;
                }
                let other = &kb.diseases[&entry.disease];
                for fid in other.links.keys() {
                    if considered.contains(fid) {
                        continue;
                    }
                    if let Some(link) = disease.links.get(fid) {
                        shared.push((fid.clone(), link.frequency));
                    }
                }
            }
            shared.sort();
            shared.dedup();
            phase_order(kb, &mut shared);
            prioritized = shared.into_iter().map(|(fid, _)| fid).collect();
            snapshots.push(TraceSnapshot {
                step: entries.len(),
                ddx,
            });
        }
    }

    if entries.len() < config.min_findings {
        return Ok(SampleOutcome::Invalid(InvalidReason::TooFewFindings {
            sampled: entries.len(),
        }));
    }

    let findings = CaseFindings::new(entries);
    let final_ddx = rank_ddx(kb, weights, &findings, DDX_CAP)?;
    snapshots.push(TraceSnapshot {
        step: findings.len(),
        ddx: final_ddx.clone(),
    });

    if !final_ddx.is_strict_top(seed_disease) {
        return Ok(SampleOutcome::Invalid(InvalidReason::SeedNotTop));
    }

    Ok(SampleOutcome::Valid(Box::new(SimulatedCase {
        case: StructuredCase {
            seed_disease: seed_disease.clone(),
            findings,
            ddx: final_ddx,
            demographics,
        },
        trace: SimTrace {
            snapshots,
            attempt: 0,
            exclusion_skips,
        },
    })))
}

/// Run all attempts for one seed disease and apply the validity gate.
pub fn simulate_disease(
    kb: &KnowledgeBase,
    weights: &ScoreWeights,
    seed_disease: &DiseaseId,
    config: &SimConfig,
) -> Result<DiseaseOutcome, SimError> {
    config.check()?;
    if kb.disease(seed_disease).is_none() {
        return Err(SimError::UnknownDisease(seed_disease.clone()));
    }
    let mut valid = Vec::new();
    for attempt in 0..config.max_attempts {
        let mut rng = attempt_rng(config.rng_seed, seed_disease, attempt);
        if let SampleOutcome::Valid(mut sim) =
            sample_case(kb, weights, seed_disease, config, &mut rng)?
        {
            sim.trace.attempt = attempt;
            valid.push(*sim);
        }
    }
    if (valid.len() as u32) < config.min_valid {
        Ok(DiseaseOutcome::Excluded {
            valid: valid.len() as u32,
            attempts: config.max_attempts,
        })
    } else {
        Ok(DiseaseOutcome::Cases(valid))
    }
}

/// Diseases that appeared in a non-final differential snapshot but are
/// absent from the final one, in first-appearance order.
pub fn discarded_diagnoses(trace: &SimTrace) -> Result<Vec<DiseaseId>, SimError> {
    if trace.snapshots.len() < 2 {
        return Err(SimError::TooFewSnapshots(trace.snapshots.len()));
    }
    let (final_snapshot, earlier) = trace.snapshots.split_last().expect("len checked");
    let final_set: BTreeSet<&DiseaseId> = final_snapshot.ddx.diseases().collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for snapshot in earlier {
        for disease in snapshot.ddx.diseases() {
            if !final_set.contains(disease) && seen.insert(disease.clone()) {
                out.push(disease.clone());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{kb_from_file, synth_kb, DiseaseRecord, Finding, KbFile, LinkRecord};
    use crate::scorer::DdxEntry;

    fn symptom(id: &str, import: u8) -> Finding {
        Finding {
            id: id.into(),
            name: id.replace('_', " "),
            definition: None,
            import,
            kind: FindingKind::Symptom,
            exclusion_group: None,
        }
    }

    fn link(finding: &str, es: u8, freq: u8) -> LinkRecord {
        LinkRecord {
            finding: finding.into(),
            evoking_strength: es,
            frequency: freq,
        }
    }

    fn single_disease_kb() -> KnowledgeBase {
        let findings: Vec<Finding> = (0..10).map(|i| symptom(&format!("f{i}"), 3)).collect();
        let links = (0..10).map(|i| link(&format!("f{i}"), 4, 3)).collect();
        kb_from_file(KbFile {
            format_version: 1,
            findings,
            diseases: vec![DiseaseRecord {
                id: "d0".into(),
                name: "only disease".into(),
                categories: vec!["c".into()],
                links,
            }],
        })
        .unwrap()
    }

    fn duplicate_disease_kb() -> KnowledgeBase {
        let findings: Vec<Finding> = (0..10).map(|i| symptom(&format!("f{i}"), 3)).collect();
        let links: Vec<LinkRecord> = (0..10).map(|i| link(&format!("f{i}"), 4, 3)).collect();
        kb_from_file(KbFile {
            format_version: 1,
            findings,
            diseases: vec![
                DiseaseRecord {
                    id: "d0".into(),
                    name: "twin a".into(),
                    categories: vec!["c".into()],
                    links: links.clone(),
                },
                DiseaseRecord {
                    id: "d1".into(),
                    name: "twin b".into(),
                    categories: vec!["c".into()],
                    links,
                },
            ],
        })
        .unwrap()
    }

    fn test_config() -> SimConfig {
        SimConfig {
            rng_seed: 7,
            present_prob: [0.5; 5],
            max_attempts: 40,
            min_valid: 5,
            ..SimConfig::default()
        }
    }

    #[test]
    fn single_disease_cases_have_seed_as_sole_ddx() {
        let kb = single_disease_kb();
        let w = ScoreWeights::default();
        let config = test_config();
        let outcome = simulate_disease(&kb, &w, &"d0".into(), &config).unwrap();
        let cases = outcome.cases();
        assert!(!cases.is_empty());
        for sim in cases {
            assert_eq!(sim.case.ddx.len(), 1);
            assert_eq!(sim.case.ddx.top().unwrap().disease, DiseaseId::new("d0"));
        }
    }

    #[test]
    fn duplicate_diseases_can_never_be_strictly_top() {
        let kb = duplicate_disease_kb();
        let w = ScoreWeights::default();
        let config = SimConfig {
            rng_seed: 3,
            present_prob: [0.5; 5],
            ..SimConfig::default()
        };
        let outcome = simulate_disease(&kb, &w, &"d0".into(), &config).unwrap();
        match outcome {
            DiseaseOutcome::Excluded { valid, attempts } => {
                assert_eq!(valid, 0);
                assert_eq!(attempts, 200);
            }
            DiseaseOutcome::Cases(_) => panic!("twin diseases must be excluded"),
        }
    }

    #[test]
    fn stored_ddx_matches_independent_rescoring() {
        let kb = synth_kb(5, 10, 60, 8..=12).unwrap();
        let w = ScoreWeights::default();
        let config = SimConfig {
            rng_seed: 11,
            max_attempts: 60,
            min_valid: 1,
            ..SimConfig::default()
        };
        let mut checked = 0;
        for disease in kb.diseases.keys() {
            let outcome = simulate_disease(&kb, &w, disease, &config).unwrap();
            for sim in outcome.cases() {
                let again = rank_ddx(&kb, &w, &sim.case.findings, DDX_CAP).unwrap();
                assert_eq!(again, sim.case.ddx);
                assert!(again.is_strict_top(disease));
                checked += 1;
            }
        }
        assert!(checked > 0, "expected at least one valid case");
    }

    #[test]
    fn simulation_is_deterministic() {
        let kb = synth_kb(7, 30, 120, 8..=14).unwrap();
        let w = ScoreWeights::default();
        let config = SimConfig {
            rng_seed: 7,
            max_attempts: 50,
            min_valid: 1,
            ..SimConfig::default()
        };
        for disease in kb.diseases.keys().take(5) {
            let a = simulate_disease(&kb, &w, disease, &config).unwrap();
            let b = simulate_disease(&kb, &w, disease, &config).unwrap();
            assert_eq!(
                serde_json::to_string(&a).unwrap(),
                serde_json::to_string(&b).unwrap()
            );
        }
    }

    #[test]
    fn no_case_violates_exclusion_groups() {
        let kb = synth_kb(9, 12, 60, 8..=12).unwrap();
        let w = ScoreWeights::default();
        let config = SimConfig {
            rng_seed: 2,
            max_attempts: 30,
            min_valid: 1,
            ..SimConfig::default()
        };
        for disease in kb.diseases.keys() {
            let outcome = simulate_disease(&kb, &w, disease, &config).unwrap();
            for sim in outcome.cases() {
                sim.case.findings.check(&kb).unwrap();
            }
        }
    }

    #[test]
    fn unknown_seed_disease_is_an_error() {
        let kb = single_disease_kb();
        let w = ScoreWeights::default();
        assert!(matches!(
            simulate_disease(&kb, &w, &"ghost".into(), &SimConfig::default()),
            Err(SimError::UnknownDisease(_))
        ));
    }

    fn snapshot(step: usize, ids: &[&str]) -> TraceSnapshot {
        TraceSnapshot {
            step,
            ddx: RankedDdx {
                entries: ids
                    .iter()
                    .enumerate()
                    .map(|(i, id)| DdxEntry {
                        disease: (*id).into(),
                        score: (ids.len() - i) as i64,
                    })
                    .collect(),
            },
        }
    }

    fn trace(snapshots: Vec<TraceSnapshot>) -> SimTrace {
        SimTrace {
            snapshots,
            attempt: 0,
            exclusion_skips: 0,
        }
    }

    #[test]
    fn discarded_is_set_difference() {
        let t = trace(vec![snapshot(6, &["A", "B", "C"]), snapshot(12, &["A", "C"])]);
        assert_eq!(discarded_diagnoses(&t).unwrap(), vec![DiseaseId::new("B")]);
    }

    #[test]
    fn identical_snapshots_discard_nothing() {
        let t = trace(vec![snapshot(6, &["A", "B"]), snapshot(12, &["A", "B"])]);
        assert!(discarded_diagnoses(&t).unwrap().is_empty());
    }

    #[test]
    fn discarded_keeps_first_appearance_order() {
        // Union of non-final snapshots {A, B, D} minus final {A} = {B, D},
        // ordered by first appearance.
        let t = trace(vec![
            snapshot(6, &["A", "B"]),
            snapshot(9, &["B", "D"]),
            snapshot(12, &["A"]),
        ]);
        assert_eq!(
            discarded_diagnoses(&t).unwrap(),
            vec![DiseaseId::new("B"), DiseaseId::new("D")]
        );
    }

    #[test]
    fn too_few_snapshots_is_an_error() {
        let t = trace(vec![snapshot(12, &["A"])]);
        assert!(matches!(
            discarded_diagnoses(&t),
            Err(SimError::TooFewSnapshots(1))
        ));
    }

    #[test]
    fn sampled_order_respects_descending_frequency_within_phases() {
        // One disease, no demographics, symptoms with distinct frequencies.
        let findings: Vec<Finding> = (0..8).map(|i| symptom(&format!("f{i}"), 3)).collect();
        let links: Vec<LinkRecord> = (0..8)
            .map(|i| link(&format!("f{i}"), 3, (i % 5 + 1) as u8))
            .collect();
        let kb = kb_from_file(KbFile {
            format_version: 1,
            findings,
            diseases: vec![DiseaseRecord {
                id: "d0".into(),
                name: "solo".into(),
                categories: vec!["c".into()],
                links,
            }],
        })
        .unwrap();
        let config = SimConfig {
            rng_seed: 1,
            ddx_checkpoint_after: 100, // keep the priority queue out of the way
            min_findings: 1,
            ..SimConfig::default()
        };
        let mut rng = attempt_rng(config.rng_seed, &"d0".into(), 0);
        let outcome =
            sample_case(&kb, &ScoreWeights::default(), &"d0".into(), &config, &mut rng).unwrap();
        let sim = match outcome {
            SampleOutcome::Valid(sim) => sim,
            SampleOutcome::Invalid(r) => panic!("expected valid, got {r:?}"),
        };
        let freqs: Vec<u8> = sim
            .case
            .findings
            .iter()
            .map(|e| kb.diseases[&DiseaseId::new("d0")].links[&e.finding].frequency)
            .collect();
        assert!(freqs.windows(2).all(|w| w[0] >= w[1]), "frequencies {freqs:?}");
    }
}
