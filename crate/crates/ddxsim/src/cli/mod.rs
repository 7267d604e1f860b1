//! Batch entry points wiring the pipeline stages together.
//!
//! One config file plus flag overrides (flags win). Every subcommand writes
//! only under the configured output directory and is idempotent for fixed
//! seeds, timestamps aside. Failures exit nonzero with a single
//! machine-parsable `error: ...` line on stderr.

pub mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Mutex;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chat::{
    build_profile, generate_chat_single, generate_chat_turnwise, scripting, transcript,
    verify_and_repair, ChatMode, ChatRecord, PhraseBank,
};
use crate::dataset::{
    case_key, corpus_stats, export_training_pairs, read_jsonl, render_stats, split_corpus,
    write_jsonl, CaseRecord, CorpusRecord, Provenance,
};
use crate::eval::{
    category_breakdown, external_candidates, judge::judge_binary_with,
    judge::judge_similarity_with, metrics::exact_match_rank, reference_candidates, run_ddx,
    wilcoxon_signed_rank, CandidateList, EvalReport,
};
use crate::kb::{load_kb, synth_kb, validate_records, write_kb, DiseaseId, KbFile};
use crate::llm::mock::MockScript;
use crate::llm::template::{vars, TemplateSet};
use crate::llm::{BackendKind, ChatTurnRequest, LlmHandle};
use crate::sim::{discarded_diagnoses, simulate_disease, DiseaseOutcome, StructuredCase};

use config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(
    name = "ddxsim",
    about = "Simulate rare-disease cases and history-taking chats from an expert-system \
             knowledge base, build training corpora, and evaluate differential diagnosis",
    version
)]
pub struct Cli {
    /// Pipeline config file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Knowledge base path override.
    #[arg(long, global = true)]
    pub kb: Option<PathBuf>,
    /// Output directory override.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Simulation and split seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for simulation.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a knowledge base file and report every violation.
    KbValidate,
    /// Generate a synthetic knowledge base under the output directory.
    KbSynth {
        #[arg(long, default_value_t = 30)]
        diseases: usize,
        #[arg(long, default_value_t = 120)]
        findings: usize,
        #[arg(long, default_value_t = 8)]
        links_min: usize,
        #[arg(long, default_value_t = 14)]
        links_max: usize,
    },
    /// Simulate cases for every disease (writes cases.jsonl and the
    /// exclusion report).
    Simulate {
        /// Restrict to specific disease ids.
        #[arg(long)]
        disease: Vec<String>,
    },
    /// Generate history-taking chats for simulated cases.
    Chats {
        #[arg(long, default_value = "single")]
        mode: ChatMode,
        /// Backend override for the chat-gen and checker stages.
        #[arg(long)]
        backend: Option<BackendArg>,
        /// Mock script for the chat-gen stage; synthesized when omitted.
        #[arg(long)]
        script: Option<PathBuf>,
    },
    /// Build near-miss negative chats from discarded diagnoses, with a
    /// judge pre-screen and a review sheet.
    Negatives {
        #[arg(long, default_value_t = 1)]
        max_per_case: usize,
    },
    /// Split the corpus into train/val/test with structured-case dedup.
    Split,
    /// Report corpus statistics per split.
    Stats,
    /// Export candidate-generator training pairs from a split.
    ExportPairs {
        #[arg(long, default_value = "train")]
        split: SplitArg,
    },
    /// Evaluate candidate generation against the seed disease (exact match).
    EvalCandidates {
        #[arg(long, default_value = "reference")]
        backend: CandidateArg,
        #[arg(long, default_value = "test")]
        split: SplitArg,
    },
    /// Generate final differentials and evaluate them against the seed.
    EvalDdx {
        #[arg(long, default_value = "reference")]
        candidates: CandidatesMode,
        #[arg(long, default_value = "exact")]
        matcher: MatcherArg,
        /// Also run the five-level similarity judge per record.
        #[arg(long)]
        similarity: bool,
        /// Verdicts file of a baseline run; adds a Wilcoxon signed-rank
        /// p-value over paired reciprocal ranks.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: SplitArg,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Mock,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    fn files(&self) -> &'static [&'static str] {
        match self {
            SplitArg::Train => &["train.jsonl"],
            SplitArg::Val => &["val.jsonl"],
            SplitArg::Test => &["test.jsonl"],
            SplitArg::All => &["train.jsonl", "val.jsonl", "test.jsonl"],
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Val => "val",
            SplitArg::Test => "test",
            SplitArg::All => "all",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CandidateArg {
    Reference,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CandidatesMode {
    Reference,
    External,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatcherArg {
    Exact,
    Judge,
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Parse and run from explicit argv; the test entry point.
pub fn run_args<I, S>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    run(cli)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(kb) = cli.kb {
        config.kb_path = kb;
    }
    if let Some(out) = cli.out {
        config.out_dir = out;
    }
    if let Some(seed) = cli.seed {
        config.sim.rng_seed = seed;
        config.split.rng_seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = workers.max(1);
    }
    std::fs::create_dir_all(&config.out_dir)
        .with_context(|| format!("cannot create {}", config.out_dir.display()))?;

    match cli.command {
        Command::KbValidate => kb_validate(&config),
        Command::KbSynth {
            diseases,
            findings,
            links_min,
            links_max,
        } => kb_synth(&config, diseases, findings, links_min..=links_max),
        Command::Simulate { disease } => simulate(&config, &disease),
        Command::Chats {
            mode,
            backend,
            script,
        } => chats(&config, mode, backend, script),
        Command::Negatives { max_per_case } => negatives(&config, max_per_case),
        Command::Split => split(&config),
        Command::Stats => stats(&config),
        Command::ExportPairs { split } => export_pairs(&config, split),
        Command::EvalCandidates { backend, split } => eval_candidates(&config, backend, split),
        Command::EvalDdx {
            candidates,
            matcher,
            similarity,
            baseline,
            split,
        } => eval_ddx(&config, candidates, matcher, similarity, baseline, split),
    }
}

fn templates(config: &PipelineConfig) -> anyhow::Result<TemplateSet> {
    Ok(match &config.templates_dir {
        Some(dir) => TemplateSet::from_dir(dir)?,
        None => TemplateSet::builtin(),
    })
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn fnv1a(data: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &byte in data {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Order-preserving parallel map over a fixed worker count.
fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                *slots[i].lock().unwrap() = Some(f(&items[i]));
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("worker filled slot"))
        .collect()
}

// ---------------------------------------------------------------------------
// kb-validate / kb-synth
// ---------------------------------------------------------------------------

fn kb_validate(config: &PipelineConfig) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&config.kb_path)
        .with_context(|| format!("cannot read {}", config.kb_path.display()))?;
    let file: KbFile =
        toml::from_str(&text).with_context(|| format!("parse {}", config.kb_path.display()))?;
    let violations = validate_records(&file);
    for violation in &violations {
        println!("{violation}");
    }
    println!("{} violations", violations.len());
    if violations.is_empty() {
        Ok(())
    } else {
        bail!("kb invalid: {} violations", violations.len())
    }
}

fn kb_synth(
    config: &PipelineConfig,
    diseases: usize,
    findings: usize,
    links: std::ops::RangeInclusive<usize>,
) -> anyhow::Result<()> {
    let kb = synth_kb(config.sim.rng_seed, diseases, findings, links)?;
    let path = config.out_path("kb.toml");
    write_kb(&kb, &path)?;
    println!(
        "wrote {} ({} diseases, {} findings)",
        path.display(),
        kb.diseases.len(),
        kb.findings.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ExclusionRow {
    disease: DiseaseId,
    name: String,
    valid: u32,
    attempts: u32,
    excluded: bool,
}

fn simulate(config: &PipelineConfig, filter: &[String]) -> anyhow::Result<()> {
    let kb = load_kb(&config.kb_path)?;
    let diseases: Vec<DiseaseId> = if filter.is_empty() {
        kb.diseases.keys().cloned().collect()
    } else {
        filter.iter().map(|d| DiseaseId::new(d.clone())).collect()
    };
    let outcomes = parallel_map(&diseases, config.workers, |disease| {
        simulate_disease(&kb, &config.weights, disease, &config.sim)
    });

    let mut cases = Vec::new();
    let mut report = Vec::new();
    for (disease, outcome) in diseases.iter().zip(outcomes) {
        let outcome = outcome?;
        let name = kb.disease_name(disease).unwrap_or(disease.as_str()).to_string();
        report.push(ExclusionRow {
            disease: disease.clone(),
            name,
            valid: outcome.valid_count(),
            attempts: config.sim.max_attempts,
            excluded: outcome.is_excluded(),
        });
        if let DiseaseOutcome::Cases(sims) = outcome {
            for sim in sims {
                cases.push(CaseRecord {
                    id: CaseRecord::case_id(disease, sim.trace.attempt),
                    case: sim.case,
                    trace: sim.trace,
                    rng_seed: config.sim.rng_seed,
                });
            }
        }
    }

    write_jsonl(config.out_path("cases.jsonl"), &cases)?;
    write_jsonl(config.out_path("exclusions.jsonl"), &report)?;
    let mut text = String::from("disease  valid/attempts  status\n");
    for row in &report {
        text.push_str(&format!(
            "{:<8} {:>5}/{:<8} {}\n",
            row.disease,
            row.valid,
            row.attempts,
            if row.excluded { "EXCLUDED" } else { "kept" }
        ));
    }
    std::fs::write(config.out_path("exclusions.txt"), &text)?;
    let excluded = report.iter().filter(|r| r.excluded).count();
    println!(
        "{} diseases simulated, {} excluded, {} cases written",
        report.len(),
        excluded,
        cases.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// chats
// ---------------------------------------------------------------------------

fn stage_handle(
    stage: &config::StageLlm,
    script_override: Option<PathBuf>,
    fallback_script: impl FnOnce() -> Option<MockScript>,
) -> anyhow::Result<LlmHandle> {
    let mut cfg = stage.config.clone();
    let script = match (&cfg.backend, script_override.or_else(|| stage.script.clone())) {
        (BackendKind::Mock, Some(path)) => Some(MockScript::load(path)?),
        (BackendKind::Mock, None) => Some(fallback_script().unwrap_or_default()),
        (BackendKind::Remote, _) => None,
    };
    if cfg.backend == BackendKind::Mock {
        // Mock runs are serial; a generous cap keeps the limiter out of the way.
        cfg.requests_per_minute = cfg.requests_per_minute.max(6000);
    }
    Ok(LlmHandle::new(cfg, script)?)
}

fn chats(
    config: &PipelineConfig,
    mode: ChatMode,
    backend: Option<BackendArg>,
    script: Option<PathBuf>,
) -> anyhow::Result<()> {
    let kb = load_kb(&config.kb_path)?;
    let templates = templates(config)?;
    let cases: Vec<CaseRecord> = read_jsonl(config.out_path("cases.jsonl"))
        .context("run `simulate` first to produce cases.jsonl")?;

    let mut chat_stage = config.llm.chat_gen.clone();
    let mut checker_stage = config.llm.checker.clone();
    if let Some(backend) = backend {
        let kind = match backend {
            BackendArg::Mock => BackendKind::Mock,
            BackendArg::Remote => BackendKind::Remote,
        };
        chat_stage.config.backend = kind;
        checker_stage.config.backend = kind;
    }

    // With a mock chat stage and no script, synthesize one covering the
    // cases in order and persist it for inspection.
    let auto_script = |cases: &[CaseRecord]| -> anyhow::Result<Option<PathBuf>> {
        if chat_stage.config.backend != BackendKind::Mock
            || script.is_some()
            || chat_stage.script.is_some()
        {
            return Ok(None);
        }
        let refs: Vec<&StructuredCase> = cases.iter().map(|c| &c.case).collect();
        let generated = scripting::chat_script_for_cases(&kb, &refs, mode);
        let path = config.out_path("mock_script_chats.jsonl");
        generated.save(&path)?;
        Ok(Some(path))
    };
    let script = match auto_script(&cases)? {
        Some(path) => Some(path),
        None => script,
    };

    let chat_llm = stage_handle(&chat_stage, script, || None)?;
    let checker_llm = stage_handle(&checker_stage, None, || Some(MockScript::default()))?;
    let profile_llm = (chat_stage.config.backend == BackendKind::Remote).then_some(&chat_llm);

    let mut bank = PhraseBank::new();
    let mut records: Vec<ChatRecord> = Vec::new();
    for case_record in &cases {
        let mut rng = ChaCha8Rng::seed_from_u64(
            config.sim.rng_seed ^ fnv1a(case_record.id.as_bytes()),
        );
        let profile = build_profile(&case_record.case, profile_llm, &mut rng, &templates)
            .with_context(|| format!("profile for case {}", case_record.id))?;
        let record = match mode {
            ChatMode::Single => generate_chat_single(
                &kb,
                &case_record.id,
                &case_record.case,
                &profile,
                &chat_llm,
                &mut bank,
                &templates,
            ),
            ChatMode::Turnwise => generate_chat_turnwise(
                &kb,
                &case_record.id,
                &case_record.case,
                &profile,
                &chat_llm,
                &mut bank,
                &templates,
            ),
        }
        .with_context(|| format!("chat for case {}", case_record.id))?;
        let record = verify_and_repair(&kb, record, &case_record.case, &checker_llm, &templates)
            .with_context(|| format!("checker for case {}", case_record.id))?;
        records.push(record);
    }

    write_jsonl(config.out_path("chats.jsonl"), &records)?;
    std::fs::write(
        config.out_path("phrase_bank.json"),
        serde_json::to_string_pretty(&bank)?,
    )?;
    let discarded = records.iter().filter(|r| r.meta.discarded).count();
    let repaired = records
        .iter()
        .filter(|r| r.meta.repair_attempts > 0 && !r.meta.discarded)
        .count();
    println!(
        "{} chats written ({} discarded, {} repaired)",
        records.len(),
        discarded,
        repaired
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// negatives
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct NegativeRecord {
    case_id: String,
    discarded_diagnosis: DiseaseId,
    diagnosis_name: String,
    chat: ChatRecord,
    judge_verdict: String,
    /// True when the judge confirms the diagnosis is NOT possible.
    keep: bool,
}

fn negatives(config: &PipelineConfig, max_per_case: usize) -> anyhow::Result<()> {
    let kb = load_kb(&config.kb_path)?;
    let templates = templates(config)?;
    let cases: Vec<CaseRecord> = read_jsonl(config.out_path("cases.jsonl"))
        .context("run `simulate` first to produce cases.jsonl")?;

    // Collect (case, discarded diagnosis) targets.
    let mut targets: Vec<(&CaseRecord, DiseaseId)> = Vec::new();
    for case_record in &cases {
        if case_record.trace.snapshots.len() < 2 {
            continue;
        }
        for disease in discarded_diagnoses(&case_record.trace)?
            .into_iter()
            .take(max_per_case)
        {
            targets.push((case_record, disease));
        }
    }

    // Negative chats present the same findings under the discarded
    // diagnosis; the mock chat stage is scripted accordingly.
    let pseudo_cases: Vec<StructuredCase> = targets
        .iter()
        .map(|(record, disease)| StructuredCase {
            seed_disease: disease.clone(),
            ..record.case.clone()
        })
        .collect();
    let chat_stage = &config.llm.chat_gen;
    let chat_llm = stage_handle(chat_stage, None, || {
        let refs: Vec<&StructuredCase> = pseudo_cases.iter().collect();
        Some(scripting::chat_script_for_cases(&kb, &refs, ChatMode::Single))
    })?;
    let checker_llm = stage_handle(&config.llm.checker, None, || Some(MockScript::default()))?;
    let profile_llm = (chat_stage.config.backend == BackendKind::Remote).then_some(&chat_llm);
    // The pre-screen judge answers "no" for every record when mocked.
    let judge_llm = stage_handle(&config.llm.judge, None, || {
        let mut script = MockScript::default();
        for _ in 0..pseudo_cases.len() {
            script.push_ordinal("no\nThe findings fit the seed disease better.");
        }
        Some(script)
    })?;

    let mut bank = PhraseBank::new();
    let mut out = Vec::new();
    let mut review = String::new();
    for ((case_record, disease), pseudo) in targets.iter().zip(&pseudo_cases) {
        let mut rng = ChaCha8Rng::seed_from_u64(
            config.sim.rng_seed ^ fnv1a(format!("{}-{}", case_record.id, disease).as_bytes()),
        );
        let profile = build_profile(pseudo, profile_llm, &mut rng, &templates)?;
        let negative_id = format!("{}-neg-{}", case_record.id, disease);
        let record = generate_chat_single(
            &kb,
            &negative_id,
            pseudo,
            &profile,
            &chat_llm,
            &mut bank,
            &templates,
        )
        .with_context(|| format!("negative chat {negative_id}"))?;
        let record = verify_and_repair(&kb, record, pseudo, &checker_llm, &templates)?;
        if record.meta.discarded {
            continue;
        }
        let diagnosis_name = kb
            .disease_name(disease)
            .unwrap_or(disease.as_str())
            .to_string();
        let chat_text = transcript::render_plain(&record.messages);
        let prompt = templates.negative_screen.render(&vars([
            ("chat_text", chat_text.as_str()),
            ("disease_name", diagnosis_name.as_str()),
        ]))?;
        let response = judge_llm.complete(&ChatTurnRequest::user(prompt))?;
        let verdict = response
            .text
            .lines()
            .next()
            .unwrap_or("")
            .trim()
            .to_lowercase();
        let keep = verdict == "no";
        review.push_str(&format!(
            "=== {negative_id}\ndiagnosis under review: {diagnosis_name}\njudge verdict: {verdict}\n{}\n",
            transcript::render_annotated(&record.messages, &kb)
        ));
        out.push(NegativeRecord {
            case_id: case_record.id.clone(),
            discarded_diagnosis: disease.clone(),
            diagnosis_name,
            chat: record,
            judge_verdict: verdict,
            keep,
        });
    }

    write_jsonl(config.out_path("negatives.jsonl"), &out)?;
    std::fs::write(config.out_path("negatives_review.txt"), review)?;
    let kept = out.iter().filter(|n| n.keep).count();
    println!(
        "{} negative chats written ({} kept by the pre-screen)",
        out.len(),
        kept
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// split / stats / export-pairs
// ---------------------------------------------------------------------------

fn compose_corpus(config: &PipelineConfig) -> anyhow::Result<Vec<CorpusRecord>> {
    let cases: Vec<CaseRecord> = read_jsonl(config.out_path("cases.jsonl"))
        .context("run `simulate` first to produce cases.jsonl")?;
    let chats: Vec<ChatRecord> = read_jsonl(config.out_path("chats.jsonl"))
        .context("run `chats` first to produce chats.jsonl")?;
    let by_id: BTreeMap<&str, &CaseRecord> =
        cases.iter().map(|c| (c.id.as_str(), c)).collect();
    let stamp = now_unix();
    let mut records = Vec::new();
    for chat in chats {
        if chat.meta.discarded {
            continue;
        }
        let case = by_id
            .get(chat.case_id.as_str())
            .with_context(|| format!("chat {} references unknown case", chat.case_id))?;
        records.push(CorpusRecord {
            id: chat.case_id.clone(),
            case: case.case.clone(),
            provenance: Provenance {
                generator_model: chat.meta.model.clone(),
                rng_seed: case.rng_seed,
                generated_at_unix: Some(stamp),
            },
            chat,
        });
    }
    Ok(records)
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitReport {
    train: usize,
    val: usize,
    test: usize,
    dedup_dropped: usize,
    dropped_ids: Vec<String>,
}

fn split(config: &PipelineConfig) -> anyhow::Result<()> {
    let records = compose_corpus(config)?;
    let result = split_corpus(records, &config.split)?;
    write_jsonl(config.out_path("train.jsonl"), &result.train)?;
    write_jsonl(config.out_path("val.jsonl"), &result.val)?;
    write_jsonl(config.out_path("test.jsonl"), &result.test)?;
    let report = SplitReport {
        train: result.train.len(),
        val: result.val.len(),
        test: result.test.len(),
        dedup_dropped: result.dropped.len(),
        dropped_ids: result.dropped.iter().map(|r| r.id.clone()).collect(),
    };
    std::fs::write(
        config.out_path("split_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    // Safety net: the post-split invariant is cheap to re-check here.
    for t in &result.train {
        let key = case_key(&t.case);
        debug_assert!(!result
            .val
            .iter()
            .chain(result.test.iter())
            .any(|h| case_key(&h.case) == key));
    }
    println!(
        "train {} / val {} / test {} (dedup dropped {})",
        report.train, report.val, report.test, report.dedup_dropped
    );
    Ok(())
}

fn load_split(config: &PipelineConfig, split: SplitArg) -> anyhow::Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    for file in split.files() {
        let mut records: Vec<CorpusRecord> = read_jsonl(config.out_path(file))
            .with_context(|| format!("run `split` first to produce {file}"))?;
        out.append(&mut records);
    }
    Ok(out)
}

fn stats(config: &PipelineConfig) -> anyhow::Result<()> {
    let train = load_split(config, SplitArg::Train)?;
    let val = load_split(config, SplitArg::Val)?;
    let test = load_split(config, SplitArg::Test)?;
    let stats = corpus_stats(&[
        ("train", train.as_slice()),
        ("val", val.as_slice()),
        ("test", test.as_slice()),
    ])?;
    let text = render_stats(&stats);
    std::fs::write(config.out_path("stats.txt"), &text)?;
    std::fs::write(
        config.out_path("stats.json"),
        serde_json::to_string_pretty(&stats)?,
    )?;
    print!("{text}");
    Ok(())
}

fn export_pairs(config: &PipelineConfig, split: SplitArg) -> anyhow::Result<()> {
    let kb = load_kb(&config.kb_path)?;
    let records = load_split(config, split)?;
    let file = match split {
        SplitArg::Train => "pairs.jsonl".to_string(),
        other => format!("pairs_{}.jsonl", other.tag()),
    };
    let count = export_training_pairs(&kb, &records, config.out_path(&file))?;
    println!("{count} training pairs written to {file}");
    Ok(())
}

// ---------------------------------------------------------------------------
// eval-candidates / eval-ddx
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CandidateVerdict {
    id: String,
    seed_disease: DiseaseId,
    seed_name: String,
    candidates: Vec<String>,
    matched_rank: Option<usize>,
    reciprocal_rank: f64,
}

fn eval_candidates(
    config: &PipelineConfig,
    backend: CandidateArg,
    split: SplitArg,
) -> anyhow::Result<()> {
    let kb = load_kb(&config.kb_path)?;
    let records = load_split(config, split)?;
    if records.is_empty() {
        bail!("split {} is empty", split.tag());
    }
    let external_llm = match backend {
        CandidateArg::External => Some(stage_handle(&config.llm.ddx, None, || None)?),
        CandidateArg::Reference => None,
    };

    let mut verdicts = Vec::new();
    for record in &records {
        let list = match backend {
            CandidateArg::Reference => {
                reference_candidates(&kb, &config.weights, &record.case.findings)?
            }
            CandidateArg::External => {
                let chat_text = transcript::render_plain(&record.chat.messages);
                external_candidates(external_llm.as_ref().expect("external llm"), &chat_text)?
            }
        };
        let seed_name = kb
            .disease_name(&record.case.seed_disease)
            .unwrap_or(record.case.seed_disease.as_str())
            .to_string();
        let matched_rank = exact_match_rank(list.names(), &seed_name);
        verdicts.push(CandidateVerdict {
            id: record.id.clone(),
            seed_disease: record.case.seed_disease.clone(),
            seed_name,
            candidates: list.names().to_vec(),
            matched_rank,
            reciprocal_rank: matched_rank.map(|r| 1.0 / r as f64).unwrap_or(0.0),
        });
    }

    let metrics = crate::eval::RankMetrics::from_ranks(
        verdicts.iter().map(|v| v.matched_rank).collect(),
    );
    let mut report = EvalReport::from_metrics(&metrics);
    let results: Vec<(DiseaseId, Option<usize>)> = verdicts
        .iter()
        .map(|v| (v.seed_disease.clone(), v.matched_rank))
        .collect();
    report.per_category = category_breakdown(&results, &kb)?;

    let tag = match backend {
        CandidateArg::Reference => "reference",
        CandidateArg::External => "external",
    };
    write_jsonl(
        config.out_path(&format!("candidates_verdicts_{tag}.jsonl")),
        &verdicts,
    )?;
    std::fs::write(
        config.out_path(&format!("candidates_report_{tag}.json")),
        serde_json::to_string_pretty(&report)?,
    )?;
    std::fs::write(
        config.out_path(&format!("candidates_report_{tag}.txt")),
        report.render_text(),
    )?;
    print!("{}", report.render_text());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct DdxVerdict {
    id: String,
    seed_disease: DiseaseId,
    seed_name: String,
    prediction: Vec<String>,
    from_candidates: Vec<bool>,
    matched_rank: Option<usize>,
    reciprocal_rank: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    similarity: Option<String>,
    truncated: bool,
}

fn eval_ddx(
    config: &PipelineConfig,
    candidates_mode: CandidatesMode,
    matcher: MatcherArg,
    similarity: bool,
    baseline: Option<PathBuf>,
    split: SplitArg,
) -> anyhow::Result<()> {
    let kb = load_kb(&config.kb_path)?;
    let templates = templates(config)?;
    let records = load_split(config, split)?;
    if records.is_empty() {
        bail!("split {} is empty", split.tag());
    }

    // Candidate lists per record.
    let external_llm = match candidates_mode {
        CandidatesMode::External => Some(stage_handle(&config.llm.ddx, None, || None)?),
        _ => None,
    };
    let mut candidate_lists: Vec<Option<CandidateList>> = Vec::new();
    for record in &records {
        let list = match candidates_mode {
            CandidatesMode::None => None,
            CandidatesMode::Reference => Some(reference_candidates(
                &kb,
                &config.weights,
                &record.case.findings,
            )?),
            CandidatesMode::External => {
                let chat_text = transcript::render_plain(&record.chat.messages);
                Some(external_candidates(
                    external_llm.as_ref().expect("external llm"),
                    &chat_text,
                )?)
            }
        };
        candidate_lists.push(list);
    }

    // The DDx model; a scriptless mock honors injected candidates and
    // otherwise answers with common diseases only.
    let ddx_llm = stage_handle(&config.llm.ddx, None, || {
        let per_record: Vec<Vec<String>> = candidate_lists
            .iter()
            .map(|c| c.as_ref().map(|l| l.names().to_vec()).unwrap_or_default())
            .collect();
        Some(scripting::ddx_script_for_records(
            &per_record,
            candidates_mode != CandidatesMode::None,
        ))
    })?;
    let judge_llm = match (matcher, similarity) {
        (MatcherArg::Judge, _) | (_, true) => {
            Some(stage_handle(&config.llm.judge, None, || None)?)
        }
        _ => None,
    };

    let mut verdicts = Vec::new();
    let mut labels: BTreeMap<String, usize> = BTreeMap::new();
    for (record, candidates) in records.iter().zip(&candidate_lists) {
        let chat_text = transcript::render_plain(&record.chat.messages);
        let result = run_ddx(&ddx_llm, &templates, &chat_text, candidates.as_ref())
            .with_context(|| format!("ddx for record {}", record.id))?;
        let seed_name = kb
            .disease_name(&record.case.seed_disease)
            .unwrap_or(record.case.seed_disease.as_str())
            .to_string();
        let names = result.names();
        let matched_rank = match matcher {
            MatcherArg::Exact => exact_match_rank(&names, &seed_name),
            MatcherArg::Judge => judge_binary_with(
                judge_llm.as_ref().expect("judge llm"),
                &templates,
                &names,
                &seed_name,
            )?,
        };
        let label = if similarity {
            let label = judge_similarity_with(
                judge_llm.as_ref().expect("judge llm"),
                &templates,
                &names,
                &seed_name,
            )?;
            *labels.entry(label.as_str().to_string()).or_insert(0) += 1;
            Some(label.as_str().to_string())
        } else {
            None
        };
        verdicts.push(DdxVerdict {
            id: record.id.clone(),
            seed_disease: record.case.seed_disease.clone(),
            seed_name,
            from_candidates: result.entries.iter().map(|e| e.from_candidates).collect(),
            prediction: names,
            matched_rank,
            reciprocal_rank: matched_rank.map(|r| 1.0 / r as f64).unwrap_or(0.0),
            similarity: label,
            truncated: result.truncated,
        });
    }

    let metrics = crate::eval::RankMetrics::from_ranks(
        verdicts.iter().map(|v| v.matched_rank).collect(),
    );
    let mut report = EvalReport::from_metrics(&metrics);
    report.label_distribution = labels;
    let results: Vec<(DiseaseId, Option<usize>)> = verdicts
        .iter()
        .map(|v| (v.seed_disease.clone(), v.matched_rank))
        .collect();
    report.per_category = category_breakdown(&results, &kb)?;

    if let Some(baseline_path) = baseline {
        let baseline_verdicts: Vec<DdxVerdict> = read_jsonl(&baseline_path)
            .with_context(|| format!("baseline {}", baseline_path.display()))?;
        let baseline_by_id: BTreeMap<&str, f64> = baseline_verdicts
            .iter()
            .map(|v| (v.id.as_str(), v.reciprocal_rank))
            .collect();
        let mut ours = Vec::new();
        let mut theirs = Vec::new();
        for verdict in &verdicts {
            if let Some(rr) = baseline_by_id.get(verdict.id.as_str()) {
                ours.push(verdict.reciprocal_rank);
                theirs.push(*rr);
            }
        }
        if ours.len() < verdicts.len() {
            eprintln!(
                "note: baseline covers {}/{} records; pairing on the intersection",
                ours.len(),
                verdicts.len()
            );
        }
        let test = wilcoxon_signed_rank(&ours, &theirs)
            .context("wilcoxon signed-rank vs baseline")?;
        report.p_value_vs_baseline = Some(test.p_value);
    }

    let tag = match candidates_mode {
        CandidatesMode::Reference => "reference",
        CandidatesMode::External => "external",
        CandidatesMode::None => "none",
    };
    write_jsonl(
        config.out_path(&format!("ddx_verdicts_{tag}.jsonl")),
        &verdicts,
    )?;
    std::fs::write(
        config.out_path(&format!("ddx_report_{tag}.json")),
        serde_json::to_string_pretty(&report)?,
    )?;
    std::fs::write(
        config.out_path(&format!("ddx_report_{tag}.txt")),
        report.render_text(),
    )?;
    print!("{}", report.render_text());
    Ok(())
}
