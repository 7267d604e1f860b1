//! Property tests over randomized inputs.

use proptest::prelude::*;

use ddxsim::eval::metrics::RankMetrics;
use ddxsim::kb::{load_kb_str, kb_to_string, synth_kb, validate_kb};
use ddxsim::scorer::{score_disease, CaseEntry, CaseFindings, Polarity, ScoreWeights};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Every feasible synthesis is valid and round-trips through the file
    /// format byte-for-byte.
    #[test]
    fn synth_kb_valid_and_round_trips(
        seed in 0u64..10_000,
        n_diseases in 1usize..20,
        n_findings in 12usize..60,
        lo in 1usize..6,
        extra in 0usize..6,
    ) {
        let hi = (lo + extra).min(n_findings);
        let kb = synth_kb(seed, n_diseases, n_findings, lo..=hi).unwrap();
        prop_assert!(validate_kb(&kb).is_empty());

        let text = kb_to_string(&kb);
        let back = load_kb_str(&text).unwrap();
        prop_assert_eq!(&kb, &back);
        prop_assert_eq!(text, kb_to_string(&back));

        for disease in kb.diseases.values() {
            for link in disease.links.values() {
                prop_assert!((1..=5).contains(&link.evoking_strength));
                prop_assert!((1..=5).contains(&link.frequency));
            }
        }
        for finding in kb.findings.values() {
            prop_assert!((1..=5).contains(&finding.import));
        }
    }

    /// Scores ignore the order of case entries.
    #[test]
    fn scoring_is_permutation_invariant(
        seed in 0u64..5_000,
        picks in proptest::collection::vec((0usize..40, any::<bool>()), 1..12),
        rotation in 0usize..12,
    ) {
        let kb = synth_kb(seed, 8, 40, 5..=9).unwrap();
        let ids: Vec<_> = kb.findings.keys().cloned().collect();
        let mut seen = std::collections::BTreeSet::new();
        let mut groups = std::collections::BTreeSet::new();
        let mut entries = Vec::new();
        for (index, present) in picks {
            let id = &ids[index % ids.len()];
            if !seen.insert(id.clone()) {
                continue;
            }
            let mut polarity = if present { Polarity::Present } else { Polarity::Absent };
            if polarity == Polarity::Present {
                if let Some(group) = &kb.findings[id].exclusion_group {
                    if !groups.insert(group.clone()) {
                        polarity = Polarity::Absent;
                    }
                }
            }
            entries.push(CaseEntry { finding: id.clone(), polarity });
        }
        prop_assume!(!entries.is_empty());
        let case = CaseFindings::new(entries.clone());
        let mut rotated = entries;
        let shift = rotation % rotated.len().max(1);
        rotated.rotate_left(shift);
        let rotated = CaseFindings::new(rotated);

        let weights = ScoreWeights::default();
        for disease in kb.diseases.keys() {
            prop_assert_eq!(
                score_disease(&kb, &weights, &case, disease).unwrap(),
                score_disease(&kb, &weights, &rotated, disease).unwrap()
            );
        }
    }

    /// top1 <= mrr <= top5 whenever reciprocal ranks beyond rank 5 are zero.
    #[test]
    fn metric_ordering_invariant(ranks in proptest::collection::vec(proptest::option::of(1usize..=5), 1..200)) {
        let metrics = RankMetrics::from_ranks(ranks);
        prop_assert!(metrics.top1 <= metrics.mrr + 1e-12);
        prop_assert!(metrics.mrr <= metrics.top5 + 1e-12);
        prop_assert!(metrics.top5 <= 1.0 + 1e-12);
    }
}
