//! Simulate structured cases for every disease in a synthetic knowledge
//! base: the per-disease validity gate, checkpoint traces, and discarded
//! diagnoses.
//!
//! Run with: `cargo run -p ddxsim --example simulate_cases`

use ddxsim::kb::synth_kb;
use ddxsim::scorer::{Polarity, ScoreWeights};
use ddxsim::sim::{discarded_diagnoses, simulate_disease, DiseaseOutcome, SimConfig};

fn main() -> anyhow::Result<()> {
    let kb = synth_kb(7, 10, 60, 8..=12)?;
    let weights = ScoreWeights::default();
    let config = SimConfig {
        rng_seed: 7,
        ..SimConfig::default()
    };

    let mut example_shown = false;
    for disease in kb.diseases.keys() {
        let outcome = simulate_disease(&kb, &weights, disease, &config)?;
        match &outcome {
            DiseaseOutcome::Excluded { valid, attempts } => {
                println!("{disease}: EXCLUDED ({valid}/{attempts} valid)");
            }
            DiseaseOutcome::Cases(cases) => {
                println!("{disease}: kept with {} valid cases", cases.len());
                if !example_shown {
                    let sim = &cases[0];
                    example_shown = true;
                    println!("\n  first case for {}:", kb.disease_name(disease).unwrap());
                    for entry in sim.case.findings.iter() {
                        let tag = match entry.polarity {
                            Polarity::Present => "present",
                            Polarity::Absent => "absent",
                        };
                        println!("    {} ({tag})", kb.findings[&entry.finding].name);
                    }
                    println!("  differential:");
                    for entry in &sim.case.ddx.entries {
                        println!(
                            "    {} score {}",
                            kb.disease_name(&entry.disease).unwrap(),
                            entry.score
                        );
                    }
                    println!(
                        "  trace: {} snapshots, {} exclusion skips",
                        sim.trace.snapshots.len(),
                        sim.trace.exclusion_skips
                    );
                    let discarded = discarded_diagnoses(&sim.trace)?;
                    println!(
                        "  diagnoses discarded between checkpoint and completion: {:?}\n",
                        discarded
                    );
                }
            }
        }
    }
    Ok(())
}
