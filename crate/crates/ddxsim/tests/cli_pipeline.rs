//! End-to-end CLI runs: the full offline pipeline against a synthetic
//! knowledge base with the scripted mock, plus exclusion reporting and
//! idempotence.

mod common;

use std::path::Path;

use ddxsim::cli::run_args;
use ddxsim::kb::write_kb;

fn run(args: &[&str]) -> anyhow::Result<()> {
    let mut argv = vec!["ddxsim"];
    argv.extend_from_slice(args);
    run_args(argv)
}

fn out_str(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap_or_else(|_| panic!("missing {file}"))
}

#[test]
fn kb_validate_passes_on_valid_kb_and_fails_on_broken() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run(&["--out", out, "--seed", "3", "kb-synth", "--diseases", "6", "--findings", "40", "--links-min", "6", "--links-max", "9"]).unwrap();
    let kb_path = dir.path().join("kb.toml");
    run(&["--kb", kb_path.to_str().unwrap(), "--out", out, "kb-validate"]).unwrap();

    // Break the file: out-of-range evoking strength.
    let text = out_str(dir.path(), "kb.toml").replacen("evoking_strength = ", "evoking_strength = 9 # ", 1);
    std::fs::write(&kb_path, text).unwrap();
    let err = run(&["--kb", kb_path.to_str().unwrap(), "--out", out, "kb-validate"]).unwrap_err();
    assert!(err.to_string().contains("violation"));
}

#[test]
fn simulate_reports_twin_diseases_as_excluded_zero_of_200() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let kb = common::duplicate_disease_kb();
    let kb_path = dir.path().join("twins.toml");
    write_kb(&kb, &kb_path).unwrap();

    run(&["--kb", kb_path.to_str().unwrap(), "--out", out, "--seed", "5", "simulate"]).unwrap();
    let report = out_str(dir.path(), "exclusions.txt");
    assert!(report.contains("d0"), "{report}");
    assert!(report.contains("d1"));
    assert_eq!(report.matches("0/200      EXCLUDED").count(), 2, "{report}");
    let cases = out_str(dir.path(), "cases.jsonl");
    assert!(cases.trim().is_empty(), "excluded diseases must emit no cases");
}

#[test]
fn full_offline_pipeline_reconciles_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run(&["--out", out, "--seed", "11", "kb-synth", "--diseases", "8", "--findings", "50", "--links-min", "7", "--links-max", "11"]).unwrap();
    let kb_path = dir.path().join("kb.toml");
    let kb = kb_path.to_str().unwrap();

    run(&["--kb", kb, "--out", out, "--seed", "11", "simulate"]).unwrap();
    run(&["--kb", kb, "--out", out, "--seed", "11", "chats", "--mode", "single"]).unwrap();
    run(&["--kb", kb, "--out", out, "--seed", "11", "split"]).unwrap();
    run(&["--kb", kb, "--out", out, "stats"]).unwrap();
    run(&["--kb", kb, "--out", out, "export-pairs"]).unwrap();
    run(&["--kb", kb, "--out", out, "eval-candidates", "--split", "test"]).unwrap();
    run(&["--kb", kb, "--out", out, "eval-ddx", "--candidates", "none", "--split", "test"]).unwrap();
    let baseline = dir.path().join("ddx_verdicts_none.jsonl");
    run(&[
        "--kb", kb, "--out", out,
        "eval-ddx", "--candidates", "reference", "--split", "test",
        "--baseline", baseline.to_str().unwrap(),
    ])
    .unwrap();

    // Count reconciliation: every retained chat flows into the splits, and
    // the final report's n equals the evaluated split size.
    let chats: Vec<serde_json::Value> = out_str(dir.path(), "chats.jsonl")
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let retained = chats
        .iter()
        .filter(|c| !c["meta"]["discarded"].as_bool().unwrap())
        .count();
    let split_report: serde_json::Value =
        serde_json::from_str(&out_str(dir.path(), "split_report.json")).unwrap();
    let split_total = ["train", "val", "test", "dedup_dropped"]
        .iter()
        .map(|k| split_report[k].as_u64().unwrap() as usize)
        .sum::<usize>();
    assert_eq!(split_total, retained);

    let test_rows = out_str(dir.path(), "test.jsonl").lines().count();
    let report: serde_json::Value =
        serde_json::from_str(&out_str(dir.path(), "ddx_report_reference.json")).unwrap();
    assert_eq!(report["n"].as_u64().unwrap() as usize, test_rows);

    // The controlled mock gives the full uplift with a significant p.
    assert_eq!(report["top5"].as_f64().unwrap(), 1.0);
    let baseline_report: serde_json::Value =
        serde_json::from_str(&out_str(dir.path(), "ddx_report_none.json")).unwrap();
    assert_eq!(baseline_report["top5"].as_f64().unwrap(), 0.0);
    assert!(report["p_value_vs_baseline"].as_f64().unwrap() < 0.01);

    // Pair export hygiene at the CLI level.
    let pairs = out_str(dir.path(), "pairs.jsonl");
    assert!(!pairs.contains("findings:"));

    // Negatives stage runs on the same corpus.
    run(&["--kb", kb, "--out", out, "--seed", "11", "negatives", "--max-per-case", "1"]).unwrap();
    let review = out_str(dir.path(), "negatives_review.txt");
    let negatives = out_str(dir.path(), "negatives.jsonl");
    assert_eq!(
        negatives.lines().count(),
        review.matches("=== ").count()
    );
}

#[test]
fn simulate_and_split_are_idempotent() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();

    for dir in [&dir_a, &dir_b] {
        let out = dir.path().to_str().unwrap();
        run(&["--out", out, "--seed", "21", "kb-synth", "--diseases", "5", "--findings", "40", "--links-min", "6", "--links-max", "9"]).unwrap();
        let kb_path = dir.path().join("kb.toml");
        let kb = kb_path.to_str().unwrap();
        run(&["--kb", kb, "--out", out, "--seed", "21", "simulate"]).unwrap();
        run(&["--kb", kb, "--out", out, "--seed", "21", "chats"]).unwrap();
        run(&["--kb", kb, "--out", out, "--seed", "21", "split"]).unwrap();
    }

    for file in ["kb.toml", "cases.jsonl", "chats.jsonl"] {
        assert_eq!(
            out_str(dir_a.path(), file),
            out_str(dir_b.path(), file),
            "{file} differs between identical runs"
        );
    }
    // Split outputs carry a timestamp; compare with it stripped.
    let strip = |text: String| -> String {
        text.lines()
            .map(|line| {
                let mut value: serde_json::Value = serde_json::from_str(line).unwrap();
                value["provenance"]
                    .as_object_mut()
                    .unwrap()
                    .remove("generated_at_unix");
                value.to_string()
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    for file in ["train.jsonl", "val.jsonl", "test.jsonl"] {
        assert_eq!(
            strip(out_str(dir_a.path(), file)),
            strip(out_str(dir_b.path(), file)),
            "{file} differs after timestamp strip"
        );
    }
}

#[test]
fn simulate_with_workers_matches_serial_output() {
    let dir_serial = tempfile::tempdir().unwrap();
    let dir_parallel = tempfile::tempdir().unwrap();
    for (dir, workers) in [(&dir_serial, "1"), (&dir_parallel, "4")] {
        let out = dir.path().to_str().unwrap();
        run(&["--out", out, "--seed", "31", "kb-synth", "--diseases", "6", "--findings", "40", "--links-min", "6", "--links-max", "9"]).unwrap();
        let kb_path = dir.path().join("kb.toml");
        run(&["--kb", kb_path.to_str().unwrap(), "--out", out, "--seed", "31", "--workers", workers, "simulate"]).unwrap();
    }
    assert_eq!(
        out_str(dir_serial.path(), "cases.jsonl"),
        out_str(dir_parallel.path(), "cases.jsonl")
    );
}

#[test]
fn unknown_subcommand_is_rejected() {
    assert!(run(&["frobnicate"]).is_err());
}
