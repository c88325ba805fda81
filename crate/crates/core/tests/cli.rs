use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use feddiv::log::{read_log, RunLogEntry};
use serde_json::Value;

const MINIMAL: &str = r#"{
  "num_samples": 400,
  "num_clients": 4,
  "client_fraction": 0.5,
  "total_rounds": 3,
  "warmup_iterations": 1,
  "local_epochs": 2
}"#;

fn feddiv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feddiv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn missing_config_exits_1_naming_the_path() {
    let out = feddiv(&["run", "/nonexistent/cfg.json", "--out", "/tmp/unused"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("/nonexistent/cfg.json"));
}

#[test]
fn malformed_and_unknown_fields_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    let cfg = write_config(dir.path(), "{ not json");
    let out = feddiv(&["run", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    let cfg = write_config(dir.path(), r#"{"num_client": 3}"#);
    let out = feddiv(&["run", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("num_client"));

    let cfg = write_config(dir.path(), MINIMAL);
    let out = feddiv(&["run", &cfg, "--out", out_dir.to_str().unwrap(), "--set", "bogus=1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn zero_client_fraction_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"client_fraction": 0.0}"#);
    let out = feddiv(&["run", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("client_fraction"));
}

#[test]
fn run_log_layout_and_inspect_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let out_dir = dir.path().join("run");
    let out = feddiv(&["run", &cfg, "--out", out_dir.to_str().unwrap(), "--set", "seed=9"]);
    assert!(out.status.success(), "{}", stderr(&out));

    let text = fs::read_to_string(out_dir.join("run.jsonl")).unwrap();
    assert!(text.ends_with('\n') && !text.contains('\r'));
    let kinds: Vec<String> = text
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            assert_eq!(v["schema_version"], 1);
            v["type"].as_str().unwrap().to_string()
        })
        .collect();
    // warm-up: ceil(1 / 0.5) = 2 rounds, then 3 training rounds
    let mut expected = vec!["config_echo", "partition_summary", "noise_summary"];
    expected.extend(["round_record"; 5]);
    expected.push("final_summary");
    assert_eq!(kinds, expected);

    let entries = read_log(text.as_bytes()).unwrap();
    match &entries[0] {
        RunLogEntry::ConfigEcho { config } => assert_eq!(config.seed, 9),
        other => panic!("{other:?}"),
    }

    let summary: Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    for key in ["best_test_accuracy", "final_test_accuracy", "mean_filtering_accuracy", "realized_noise_rates", "seed", "config_hash"] {
        assert!(summary.get(key).is_some(), "{key}");
    }

    let log = out_dir.join("run.jsonl");
    let shown = feddiv(&["inspect", log.to_str().unwrap()]);
    assert!(shown.status.success());
    let stdout = String::from_utf8(shown.stdout).unwrap();
    let rows = stdout
        .lines()
        .filter(|l| l.trim_start().starts_with(|c: char| c.is_ascii_digit()))
        .count();
    assert_eq!(rows, 5);
    let best = summary["best_test_accuracy"].as_f64().unwrap();
    assert!(stdout.contains(&format!("best test accuracy: {best:.4}")));
}

#[test]
fn inspect_counts_training_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let out_dir = dir.path().join("run");
    let out = feddiv(&["run", &cfg, "--out", out_dir.to_str().unwrap(), "--set", "warmup_iterations=0"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let shown = feddiv(&["inspect", out_dir.join("run.jsonl").to_str().unwrap()]);
    let stdout = String::from_utf8(shown.stdout).unwrap();
    let rows = stdout.lines().filter(|l| l.contains(" train ")).count();
    assert_eq!(rows, 3);
    assert_eq!(stdout.lines().filter(|l| l.contains("warmup")).count(), 0);
}

#[test]
fn inspect_rejects_empty_and_malformed_logs() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    assert_eq!(feddiv(&["inspect", empty.to_str().unwrap()]).status.code(), Some(1));
    let junk = dir.path().join("junk.jsonl");
    fs::write(&junk, "{\"type\": \"round_record\"}\n").unwrap();
    assert_eq!(feddiv(&["inspect", junk.to_str().unwrap()]).status.code(), Some(1));
    let missing = dir.path().join("missing.jsonl");
    assert_eq!(feddiv(&["inspect", missing.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn config_echo_reproduces_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let first = dir.path().join("first");
    assert!(feddiv(&["run", &cfg, "--out", first.to_str().unwrap(), "--set", "seed=4"]).status.success());
    let text = fs::read_to_string(first.join("run.jsonl")).unwrap();
    let echo: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    let echoed = dir.path().join("echoed.json");
    fs::write(&echoed, serde_json::to_string_pretty(&echo["config"]).unwrap()).unwrap();

    let second = dir.path().join("second");
    assert!(feddiv(&["run", echoed.to_str().unwrap(), "--out", second.to_str().unwrap()]).status.success());
    assert_eq!(text, fs::read_to_string(second.join("run.jsonl")).unwrap());
}

#[test]
fn sequential_and_parallel_logs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(feddiv(&["run", &cfg, "--out", a.to_str().unwrap(), "--sequential"]).status.success());
    assert!(feddiv(&["run", &cfg, "--out", b.to_str().unwrap()]).status.success());
    assert_eq!(
        fs::read(a.join("run.jsonl")).unwrap(),
        fs::read(b.join("run.jsonl")).unwrap()
    );
}

#[test]
fn compare_writes_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let out_dir = dir.path().join("cmp");
    let out = feddiv(&["compare", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(out_dir.join("compare.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("variant,best_acc,final_acc,mean_filtering_acc"));
    let variants: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants, ["feddiv", "fedavg_baseline", "feddiv_degraded", "feddiv_local_filter"]);
    for v in variants {
        assert!(out_dir.join(v).join("run.jsonl").exists());
    }
}

#[test]
fn clean_compare_rows_share_best_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"noise_client_prob": 0.0}"#);
    let out_dir = dir.path().join("cmp");
    assert!(feddiv(&["compare", &cfg, "--out", out_dir.to_str().unwrap()]).status.success());
    let csv = fs::read_to_string(out_dir.join("compare.csv")).unwrap();
    let best = |variant: &str| {
        csv.lines()
            .find(|l| l.starts_with(&format!("{variant},")))
            .and_then(|l| l.split(',').nth(1))
            .unwrap()
            .to_string()
    };
    assert_eq!(best("feddiv"), best("fedavg_baseline"));
    assert!(csv.lines().any(|l| l.starts_with("fedavg_baseline,") && l.ends_with(",nan")));
}
