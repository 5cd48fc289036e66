use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use functok::FunctionalKind;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

fn fixture(name: &str) -> PathBuf {
    Path::new(FIXTURES).join(name)
}

fn functok(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_functok"))
        .args(args)
        .output()
        .expect("spawn functok")
}

fn ok(args: &[&str]) -> String {
    let out = functok(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn parse_then_build_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let ops = dir.path().join("ops.jsonl");
    let report = dir.path().join("report.json");
    let ds = dir.path().join("ds.jsonl");
    ok(&["parse", "--input", p(&fixture("code_table.jsonl")), "--output", p(&ops), "--report", p(&report)]);
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["retained"], 23);
    assert_eq!(rep["per_kind"]["Shape"], 9);

    ok(&["build-dataset", "--input", p(&ops), "--output", p(&ds), "--template-seed", "3"]);
    let records = functok::trajectory::read_dataset(&fs::read_to_string(&ds).unwrap()).unwrap();
    assert_eq!(records.len(), 23);
    assert!(records.iter().all(|r| r.functional_kinds.len() == 1));

    let again = dir.path().join("ds2.jsonl");
    ok(&["build-dataset", "--input", p(&ops), "--output", p(&again), "--template-seed", "3"]);
    assert_eq!(fs::read(&ds).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn score_matches_oracle_files() {
    let got = ok(&["score", "--input", p(&fixture("micro_outputs.jsonl"))]);
    assert_eq!(got, fs::read_to_string(fixture("micro_scores.jsonl")).unwrap());

    let got = ok(&[
        "score",
        "--config",
        p(&fixture("tight_reward.toml")),
        "--input",
        p(&fixture("micro_outputs_tight.jsonl")),
    ]);
    assert_eq!(got, fs::read_to_string(fixture("micro_scores_tight.jsonl")).unwrap());
}

#[test]
fn diagnose_reports_sparsity_ratio() {
    // Ten records: 2037 tokens in total, 48 of them functional.
    let dir = tempfile::tempdir().unwrap();
    let mut jsonl = String::new();
    for i in 0..10 {
        let (f, t) = (if i < 8 { 5 } else { 4 }, if i < 7 { 204 } else { 203 });
        let mut words = vec!["word".to_string(); t - f - 1];
        words.extend((0..f).map(|k| FunctionalKind::ALL[k % 5].surface().to_string()));
        words.push("<answer>1</answer>".into());
        let kinds: Vec<FunctionalKind> = (0..f).map(|k| FunctionalKind::ALL[k % 5]).collect();
        let rec = serde_json::json!({
            "id": format!("r{i}"),
            "prompt": "p",
            "trajectory_text": words.join(" "),
            "functional_kinds": kinds,
            "gold_answer": "1",
        });
        jsonl += &format!("{rec}\n");
    }
    let ds = dir.path().join("stats.jsonl");
    fs::write(&ds, jsonl).unwrap();
    let out = ok(&["diagnose", "--dataset", p(&ds)]);
    assert!(out.contains("mean total tokens 203.70"), "{out}");
    assert!(out.contains("mean functional tokens 4.80"), "{out}");
    assert!(out.contains("ratio 2.36%"), "{out}");
}

#[test]
fn zero_alpha_log_equals_grpo_log() {
    let la = ok(&["train", "--seed", "3", "--steps", "40", "--objective", "la-grpo", "--alpha", "0"]);
    let grpo = ok(&["train", "--seed", "3", "--steps", "40", "--objective", "grpo"]);
    assert_eq!(la.lines().count(), 40);
    assert_eq!(la, grpo);
    let anchored = ok(&["train", "--seed", "3", "--steps", "40", "--objective", "la-grpo"]);
    assert_ne!(anchored, grpo);
}

#[test]
fn train_writes_checkpoint_and_diagnose_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("policy.ckpt");
    let eval = dir.path().join("eval.json");
    let metrics = dir.path().join("m.jsonl");
    ok(&[
        "train", "--seed", "1", "--steps", "30", "--metrics", p(&metrics),
        "--checkpoint", p(&ckpt), "--eval", p(&eval),
    ]);
    assert!(fs::read_to_string(&ckpt).unwrap().starts_with("functok-policy 1\n"));
    let e: serde_json::Value = serde_json::from_str(&fs::read_to_string(&eval).unwrap()).unwrap();
    assert_eq!(e["episodes"], 500);
    let out = ok(&["diagnose", "--checkpoint", p(&ckpt), "--groups", "20"]);
    assert!(out.contains("gradient share la-grpo"), "{out}");
}

#[test]
fn report_efficiency() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("outs.jsonl");
    fs::write(
        &input,
        "{\"text\":\"a b <|Line|> c\",\"latency\":1.0}\n{\"text\":\"a b\",\"latency\":2.0}\n",
    )
    .unwrap();
    let out: serde_json::Value = serde_json::from_str(&ok(&["report", "--input", p(&input)])).unwrap();
    assert_eq!(out["all_tokens_mean"], 3.0);
    assert_eq!(out["func_tokens_mean"], 0.5);
    assert_eq!(out["wall_latency_mean"], 1.5);
}

#[test]
fn ablate_report_shape() {
    let out = ok(&["ablate", "--seed", "2", "--steps", "20", "--eval-episodes", "20", "--disable", "spam"]);
    let rep: serde_json::Value = serde_json::from_str(&out).unwrap();
    let configs: Vec<&str> = rep["rows"].as_array().unwrap().iter().map(|r| r["config"].as_str().unwrap()).collect();
    assert_eq!(configs, ["full", "no-spam"]);
}

#[test]
fn validation_failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[train]\nlearning_rate = 0.0\n").unwrap();
    let table = fixture("code_table.jsonl");
    let cases: Vec<Vec<&str>> = vec![
        vec!["train", "--seed", "1", "--config", p(&bad)],
        vec!["train", "--seed", "1", "--steps", "0"],
        vec!["train", "--steps", "5"],
        vec!["ablate", "--seed", "1", "--disable", "acc"],
        vec!["parse", "--input", "/nonexistent/corpus.jsonl"],
        vec!["parse", "--input", p(&table), "--min-ops", "0"],
        vec!["frobnicate"],
        vec!["diagnose"],
    ];
    for args in cases {
        let out = functok(&args);
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(!out.stderr.is_empty());
    }
}
