//! Build a corpus from simulated cases and scripted chats, split it with
//! dedup, report statistics, and export training pairs.
//!
//! Run with: `cargo run -p ddxsim --example dataset_pipeline`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ddxsim::chat::{build_profile, generate_chat_single, scripting, PhraseBank};
use ddxsim::dataset::{
    corpus_stats, export_training_pairs, read_jsonl, render_stats, split_corpus, CorpusRecord,
    Provenance, SplitSpec, TrainingPair,
};
use ddxsim::kb::synth_kb;
use ddxsim::llm::mock::MockScript;
use ddxsim::llm::template::TemplateSet;
use ddxsim::llm::LlmHandle;
use ddxsim::scorer::ScoreWeights;
use ddxsim::sim::{simulate_disease, SimConfig};

fn main() -> anyhow::Result<()> {
    let kb = synth_kb(11, 8, 50, 7..=11)?;
    let weights = ScoreWeights::default();
    let config = SimConfig {
        rng_seed: 11,
        max_attempts: 80,
        min_valid: 5,
        ..SimConfig::default()
    };
    let templates = TemplateSet::builtin();

    // Corpus: up to 10 chats per kept disease via the scripted mock.
    let mut records = Vec::new();
    let mut bank = PhraseBank::new();
    for disease in kb.diseases.keys() {
        let outcome = simulate_disease(&kb, &weights, disease, &config)?;
        for (i, sim) in outcome.cases().iter().take(10).enumerate() {
            let id = format!("{disease}-c{i}");
            let mut rng = ChaCha8Rng::seed_from_u64(records.len() as u64);
            let profile = build_profile(&sim.case, None, &mut rng, &templates)?;
            let llm = LlmHandle::mock(MockScript::always(scripting::scripted_chat_reply(
                &kb, &sim.case,
            )));
            let chat =
                generate_chat_single(&kb, &id, &sim.case, &profile, &llm, &mut bank, &templates)?;
            records.push(CorpusRecord {
                id,
                case: sim.case.clone(),
                chat,
                provenance: Provenance {
                    generator_model: "mock".into(),
                    rng_seed: config.rng_seed,
                    generated_at_unix: None,
                },
            });
        }
    }
    println!("corpus: {} records", records.len());

    let spec = SplitSpec {
        ratios: (0.7, 0.15, 0.15),
        rng_seed: 5,
    };
    let result = split_corpus(records, &spec)?;
    println!(
        "split: train {} / val {} / test {} (dedup dropped {})",
        result.train.len(),
        result.val.len(),
        result.test.len(),
        result.dropped.len()
    );

    let stats = corpus_stats(&[
        ("train", result.train.as_slice()),
        ("val", result.val.as_slice()),
        ("test", result.test.as_slice()),
    ])?;
    print!("\n{}", render_stats(&stats));

    let dir = std::env::temp_dir().join("ddxsim_dataset_example");
    std::fs::create_dir_all(&dir)?;
    let pairs_path = dir.join("pairs.jsonl");
    let written = export_training_pairs(&kb, &result.train, &pairs_path)?;
    let pairs: Vec<TrainingPair> = read_jsonl(&pairs_path)?;
    println!(
        "\nexported {written} training pairs to {}",
        pairs_path.display()
    );
    let sample = &pairs[0];
    println!("first pair target: {:?}", sample.target);
    println!("first pair input begins:\n{}", &sample.input[..sample.input.len().min(200)]);
    Ok(())
}
