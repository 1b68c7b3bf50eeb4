use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn simsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simsr")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = simsr(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Synthetic corpus, trained model and pool shared by every test.
fn fixture() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let d = |name: &str| dir.join(name).to_str().unwrap().to_owned();
        ok(&["synth", "--out", &d(""), "--seed", "1"]);
        ok(&[
            "train",
            "--data",
            &d("train.jsonl"),
            "--out",
            &d("model.smsr"),
            "--buckets",
            "16384",
            "--dim",
            "32",
        ]);
        ok(&[
            "index",
            "--data",
            &d("train.jsonl"),
            "--model",
            &d("model.smsr"),
            "--out",
            &d("pool"),
        ]);
        dir
    })
}

fn path(name: &str) -> String {
    fixture().join(name).to_str().unwrap().to_owned()
}

fn engine_args() -> Vec<String> {
    vec!["--pool".into(), path("pool"), "--model".into(), path("model.smsr")]
}

fn run_with_engine(cmd: &str, extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec![cmd.into()];
    args.extend(engine_args());
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    simsr(&refs)
}

#[test]
fn suggest_prints_json_and_is_byte_identical() {
    let a = run_with_engine(
        "suggest",
        &[
            "--message",
            "how was your weekend",
            "--strategy",
            "sample_rank",
            "--seed",
            "4",
        ],
    );
    let b = run_with_engine(
        "suggest",
        &[
            "--message",
            "how was your weekend",
            "--strategy",
            "sample_rank",
            "--seed",
            "4",
        ],
    );
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["replies"].as_array().unwrap().len(), 3);
    assert_eq!(v["tuples_evaluated"], 25);
    assert!(v.get("timings").is_none());

    let t = run_with_engine("suggest", &["--message", "hello", "--timings"]);
    let v: Value = serde_json::from_slice(&t.stdout).unwrap();
    assert!(v["timings"]["total_ms"].is_number());
}

#[test]
fn suggest_strategies_report_tuple_counts() {
    for (strategy, count) in [("exhaustive", 455), ("ablative", 114), ("greedy", 42), ("matching", 0)] {
        let out = run_with_engine("suggest", &["--message", "hi there", "--strategy", strategy]);
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["tuples_evaluated"], count, "{strategy}");
    }
}

#[test]
fn k_larger_than_pool_fails() {
    let out = run_with_engine("suggest", &["--message", "hi", "--k", "1000"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("K exceeds pool"));
}

#[test]
fn eval_reports_all_five_systems() {
    let out = run_with_engine("eval", &["--data", &path("test.jsonl")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let names: Vec<&str> = v["systems"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["system"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["matching", "mmr", "topic", "simsr", "simsr-individual"]);

    let table = run_with_engine(
        "eval",
        &[
            "--data",
            &path("test.jsonl"),
            "--systems",
            "matching,simsr",
            "--format",
            "table",
        ],
    );
    let text = String::from_utf8(table.stdout).unwrap();
    assert!(text.contains("Self-ROUGE") && text.contains("simsr"));

    let csv = run_with_engine(
        "eval",
        &["--data", &path("test.jsonl"), "--systems", "topic", "--format", "csv"],
    );
    assert_eq!(String::from_utf8(csv.stdout).unwrap().lines().count(), 2);
}

#[test]
fn bench_runs_on_a_generated_pool() {
    let out = ok(&[
        "bench",
        "--pool-size",
        "500",
        "--queries",
        "5",
        "--systems",
        "matching,simsr",
        "--format",
        "json",
    ]);
    let v: Value = serde_json::from_str(&out).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1]["tuples_evaluated"], 114.0);
}

#[test]
fn missing_files_name_the_path() {
    let out = simsr(&[
        "suggest",
        "--pool",
        "/no/such/pool",
        "--model",
        &path("model.smsr"),
        "--message",
        "hi",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/pool"));
    let out = simsr(&["train", "--data", "/no/such/data.jsonl", "--out", "/tmp/x.smsr"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/data.jsonl"));
}

#[test]
fn invalid_flags_print_usage() {
    let out = simsr(&["suggest", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = simsr(&["eval", "--pool", "p", "--model", "m", "--data", "d", "--format", "xml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_system_is_an_error() {
    let out = run_with_engine("eval", &["--data", &path("test.jsonl"), "--systems", "matching,oracle"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("oracle"));
}
