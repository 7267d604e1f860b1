//! Turn a simulated case into a history-taking chat with the scripted mock
//! backend, then push an incomplete chat through the checker/repair loop.
//!
//! Run with: `cargo run -p ddxsim --example chat_generation`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ddxsim::chat::{
    build_profile, coverage_problems, generate_chat_single, scripting, transcript,
    verify_and_repair, PhraseBank,
};
use ddxsim::kb::synth_kb;
use ddxsim::llm::mock::MockScript;
use ddxsim::llm::template::TemplateSet;
use ddxsim::llm::LlmHandle;
use ddxsim::scorer::{CaseFindings, ScoreWeights};
use ddxsim::sim::{simulate_disease, SimConfig, StructuredCase};

fn main() -> anyhow::Result<()> {
    let kb = synth_kb(7, 10, 60, 8..=12)?;
    let weights = ScoreWeights::default();
    let config = SimConfig {
        rng_seed: 7,
        max_attempts: 60,
        min_valid: 1,
        ..SimConfig::default()
    };
    let templates = TemplateSet::builtin();

    // Take the first valid case of the first kept disease.
    let mut case = None;
    for disease in kb.diseases.keys() {
        let outcome = simulate_disease(&kb, &weights, disease, &config)?;
        if let Some(sim) = outcome.cases().first() {
            case = Some(sim.case.clone());
            break;
        }
    }
    let case = case.expect("a valid case");

    // Demographic profile: slots pinned by the case, the rest sampled.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let profile = build_profile(&case, None, &mut rng, &templates)?;
    println!(
        "profile: {}, {} years, {}, {}",
        profile.name, profile.age, profile.gender, profile.location
    );

    // Generate against a scripted mock reply covering the whole case.
    let chat_llm = LlmHandle::mock(MockScript::always(scripting::scripted_chat_reply(
        &kb, &case,
    )));
    let mut bank = PhraseBank::new();
    let record = generate_chat_single(
        &kb, "demo-case", &case, &profile, &chat_llm, &mut bank, &templates,
    )?;
    println!("\ngenerated chat ({} messages):", record.messages.len());
    print!("{}", transcript::render_annotated(&record.messages, &kb));

    // Repair demo: generate from a script that omits the last finding, then
    // let the checker fix it in one edit.
    let short = StructuredCase {
        findings: CaseFindings::new(case.findings.entries[..case.findings.len() - 1].to_vec()),
        ..case.clone()
    };
    let incomplete_llm = LlmHandle::mock(MockScript::always(scripting::scripted_chat_reply(
        &kb, &short,
    )));
    let incomplete = generate_chat_single(
        &kb, "demo-case-2", &case, &profile, &incomplete_llm, &mut bank, &templates,
    )?;
    let problems = coverage_problems(&incomplete, &case);
    println!(
        "\nincomplete chat is missing {} finding(s); invoking the checker...",
        problems.missing.len()
    );
    let checker = LlmHandle::mock(MockScript::always(scripting::scripted_chat_reply(
        &kb, &case,
    )));
    let repaired = verify_and_repair(&kb, incomplete, &case, &checker, &templates)?;
    println!(
        "repaired in {} edit(s); discarded = {}",
        repaired.meta.repair_attempts, repaired.meta.discarded
    );
    Ok(())
}
