//! Evaluate differential diagnosis with and without candidate injection:
//! reference candidates from the scorer, a controlled mock DDx model, exact
//! matching, judges, and the paired significance test.
//!
//! Run with: `cargo run -p ddxsim --example evaluate_ddx`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ddxsim::chat::{build_profile, generate_chat_single, scripting, transcript, PhraseBank};
use ddxsim::eval::{
    build_ddx_prompt, judge_similarity, reference_candidates, run_ddx, topk_mrr,
    wilcoxon_signed_rank, Matcher,
};
use ddxsim::kb::synth_kb;
use ddxsim::llm::mock::MockScript;
use ddxsim::llm::template::TemplateSet;
use ddxsim::llm::LlmHandle;
use ddxsim::scorer::ScoreWeights;
use ddxsim::sim::{simulate_disease, SimConfig};

fn main() -> anyhow::Result<()> {
    let kb = synth_kb(60, 14, 70, 8..=12)?;
    let weights = ScoreWeights::default();
    let config = SimConfig {
        rng_seed: 60,
        max_attempts: 60,
        min_valid: 1,
        ..SimConfig::default()
    };
    let templates = TemplateSet::builtin();

    // One case and chat per kept disease.
    let mut cases = Vec::new();
    for disease in kb.diseases.keys() {
        let outcome = simulate_disease(&kb, &weights, disease, &config)?;
        if let Some(sim) = outcome.cases().first() {
            cases.push(sim.case.clone());
        }
    }
    let mut bank = PhraseBank::new();
    let mut chat_texts = Vec::new();
    for (i, case) in cases.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let profile = build_profile(case, None, &mut rng, &templates)?;
        let llm = LlmHandle::mock(MockScript::always(scripting::scripted_chat_reply(&kb, case)));
        let record =
            generate_chat_single(&kb, &format!("e{i}"), case, &profile, &llm, &mut bank, &templates)?;
        chat_texts.push(transcript::render_plain(&record.messages));
    }
    let golds: Vec<String> = cases
        .iter()
        .map(|c| kb.disease_name(&c.seed_disease).unwrap().to_string())
        .collect();

    // Candidates from the expert-system scorer.
    let candidates: Vec<_> = cases
        .iter()
        .map(|c| reference_candidates(&kb, &weights, &c.findings).unwrap())
        .collect();
    println!(
        "reference candidates for record 0: {:?}",
        candidates[0].names()
    );

    // Show the fusion prompt with and without injection.
    let with_prompt = build_ddx_prompt(&templates, &chat_texts[0], Some(&candidates[0]))?;
    let without_prompt = build_ddx_prompt(&templates, &chat_texts[0], None)?;
    println!(
        "\nfusion prompt grows by {} bytes when candidates are injected",
        with_prompt.len() - without_prompt.len()
    );

    // A DDx model that never names rare diseases on its own but honors the
    // candidate instructions.
    let per_record: Vec<Vec<String>> = candidates.iter().map(|c| c.names().to_vec()).collect();
    let honoring = LlmHandle::mock(scripting::ddx_script_for_records(&per_record, true));
    let ignoring = LlmHandle::mock(scripting::ddx_script_for_records(&per_record, false));

    let mut with_predictions = Vec::new();
    let mut without_predictions = Vec::new();
    for (chat_text, candidate_list) in chat_texts.iter().zip(&candidates) {
        with_predictions.push(run_ddx(&honoring, &templates, chat_text, Some(candidate_list))?.names());
        without_predictions.push(run_ddx(&ignoring, &templates, chat_text, None)?.names());
    }

    let with_metrics = topk_mrr(&with_predictions, &golds, &Matcher::Exact)?;
    let without_metrics = topk_mrr(&without_predictions, &golds, &Matcher::Exact)?;
    println!("\nwithout candidates: top1 {:.3} top5 {:.3} mrr {:.3}", without_metrics.top1, without_metrics.top5, without_metrics.mrr);
    println!("with candidates:    top1 {:.3} top5 {:.3} mrr {:.3}", with_metrics.top1, with_metrics.top5, with_metrics.mrr);

    let test = wilcoxon_signed_rank(
        &with_metrics.reciprocal_ranks(),
        &without_metrics.reciprocal_ranks(),
    )?;
    println!(
        "wilcoxon signed-rank over paired reciprocal ranks: p = {:.6} ({} branch, n = {})",
        test.p_value,
        if test.exact { "exact" } else { "approximate" },
        test.n
    );

    // The similarity judge on one record, scripted.
    let judge = LlmHandle::mock(MockScript::always("exact match"));
    let label = judge_similarity(&judge, &with_predictions[0], &golds[0])?;
    println!("\nscripted similarity judge label for record 0: {label}");
    Ok(())
}
