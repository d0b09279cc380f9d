use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lookalike(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lookalike"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}: stdout {:?} stderr {:?}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {text}"))
}

const DUMP: &str = r#"{"name":"bz2file","description":"read and write bzip2 compressed files","maintainers":["nvawda"],"weekly_downloads":900000,"created_at":"2014-01-01T00:00:00Z","readme":"Read and write bzip2 compressed files with a file like interface in pure python."}
{"name":"requests","description":"python http for humans","maintainers":["kr"],"weekly_downloads":50000000,"created_at":"2011-02-14T00:00:00Z","readme":"Requests is a simple, yet elegant, HTTP library for python programs."}
{"name":"bz2fiel","description":"read and write bzip2 compressed files","maintainers":["someone-new"],"weekly_downloads":3,"created_at":"2025-02-20T00:00:00Z"}
{"name":"numpy","description":"fundamental package for array computing","maintainers":["numpy-team"],"weekly_downloads":80000000,"created_at":"2006-01-01T00:00:00Z","readme":"NumPy is the fundamental package for scientific computing with Python."}
"#;

#[test]
fn usage_errors_exit_2_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = lookalike(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["code"], "usage");
    let out = lookalike(dir.path(), &["scan", "--registry", "cargo", "--package", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let out = lookalike(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("scan-all"));
}

#[test]
fn missing_infrastructure_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = lookalike(dir.path(), &["scan", "--registry", "pypi", "--package", "bz2fiel"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["code"], "missing_infrastructure");
    let msg = err["message"].as_str().unwrap();
    assert!(msg.contains("embedding model") && msg.contains("index for pypi"), "{msg}");
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("lookalike.toml"), "[thresholds]\nbogus = 1\n").unwrap();
    let out = lookalike(dir.path(), &["scan-all"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["code"], "invalid_config");
}

#[test]
fn ingest_train_index_scan_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("pypi.jsonl"), DUMP).unwrap();
    let out = lookalike(
        dir.path(),
        &["ingest", "--registry", "pypi", "--dump", "pypi.jsonl", "--at", "2025-03-01T00:00:00Z"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(lookalike(dir.path(), &["train"]).status.success());
    let out = lookalike(dir.path(), &["index"]);
    assert!(out.status.success());
    assert_eq!(stdout_json(&out)["trusted_indexed"]["pypi"], 3);

    let out = lookalike(dir.path(), &["scan", "--registry", "pypi", "--package", "bz2fiel"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let scan = stdout_json(&out);
    let pairs = scan["draft"]["pairs"].as_array().unwrap();
    assert!(pairs.iter().any(|p| p["target"]["raw"] == "bz2file"), "{scan}");
    assert_eq!(scan["reports"][0]["verdict"], "suspected_threat");

    let out = lookalike(dir.path(), &["scan", "--registry", "pypi", "--package", "numpy"]);
    assert!(out.status.success());
    assert!(stdout_json(&out)["draft"].is_null());

    let out = lookalike(dir.path(), &["scan-all"]);
    assert!(out.status.success());
    let first = stdout_json(&out);
    assert!(first[0]["alerts_created"].as_u64().unwrap() >= 1, "{first}");
    let again = stdout_json(&lookalike(dir.path(), &["scan-all", "--registry", "pypi"]));
    assert_eq!(again[0]["alerts_created"], 0);
}

#[test]
fn eval_counts_and_gridsearch() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("counts.jsonl"),
        "{\"row\":\"demo\",\"tp\":8,\"fp\":2,\"tn\":9,\"fn\":1,\"published\":{\"recall\":0.89,\"precision\":0.8,\"f1\":0.84,\"accuracy\":0.85}}\n",
    )
    .unwrap();
    let out = lookalike(dir.path(), &["eval", "--dataset", "counts.jsonl"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = stdout_json(&out);
    assert_eq!(rows[0]["mismatches"], serde_json::json!([]));

    let scores: String = (0..20)
        .map(|i| format!("{{\"score\":{},\"positive\":{}}}\n", i as f64 / 20.0, i >= 12))
        .collect();
    std::fs::write(dir.path().join("scores.jsonl"), scores).unwrap();
    let out = lookalike(dir.path(), &["gridsearch", "--scores", "scores.jsonl"]);
    assert!(out.status.success());
    let grid = stdout_json(&out);
    assert_eq!(grid["best"]["f1"], 1.0);
    assert_eq!(grid["curve"].as_array().unwrap().len(), 101);

    std::fs::write(dir.path().join("empty.jsonl"), "\n").unwrap();
    let out = lookalike(dir.path(), &["gridsearch", "--scores", "empty.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
}
