//! Expert-system-driven simulation of rare-disease cases and history-taking
//! chats, dataset construction, and differential-diagnosis evaluation.
//!
//! The pipeline has three stages. A diagnostic knowledge base of diseases,
//! findings, and 1–5 weighted links drives a case simulator that samples
//! polarity-tagged finding sets per seed disease and keeps only cases the
//! seed strictly wins under additive scoring. An LLM gateway (remote
//! providers or a deterministic scripted mock) turns cases into annotated
//! patient–provider chats with a checker/repair loop. An evaluation harness
//! scores candidate lists and final differentials with Top-1/Top-5/MRR,
//! LLM judges, category breakdowns, and a Wilcoxon signed-rank test.
//!
//! ## Examples
//!
//! Each major capability has a runnable example:
//!
//! - **`kb_synth`** — synthesize and validate a knowledge base, round-trip
//!   the file format
//! - **`score_and_rank`** — additive disease scoring and differential
//!   ranking on a hand-built knowledge base
//! - **`simulate_cases`** — per-disease case simulation with the validity
//!   gate, checkpoint traces, and discarded diagnoses
//! - **`chat_generation`** — profile filling, scripted chat generation, and
//!   the checker/repair loop
//! - **`dataset_pipeline`** — corpus splitting with dedup, statistics, and
//!   training-pair export
//! - **`evaluate_ddx`** — candidate generation, the fusion prompt, metrics,
//!   judges, and significance testing
//!
//! ```bash
//! cargo run -p ddxsim --example kb_synth
//! cargo run -p ddxsim --example score_and_rank
//! cargo run -p ddxsim --example simulate_cases
//! cargo run -p ddxsim --example chat_generation
//! cargo run -p ddxsim --example dataset_pipeline
//! cargo run -p ddxsim --example evaluate_ddx
//! ```
//!
//! The `ddxsim` binary wires the same stages into batch subcommands
//! (`kb-synth`, `simulate`, `chats`, `split`, `eval-ddx`, ...); see the
//! repository README.

pub mod chat;
pub mod cli;
pub mod dataset;
pub mod eval;
pub mod kb;
pub mod llm;
pub mod scorer;
pub mod sim;

pub use kb::{load_kb, synth_kb, validate_kb, KnowledgeBase};
pub use scorer::{rank_ddx, score_disease, CaseFindings, RankedDdx, ScoreWeights};
pub use sim::{sample_case, simulate_disease, SimConfig, StructuredCase};
