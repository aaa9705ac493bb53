//! End-to-end checks of the `fedmanip` binary.

use std::fs;
use std::process::{Command, Output};

fn fedmanip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedmanip"))
        .args(args)
        .env_remove("FEDMANIP_OUT")
        .output()
        .expect("binary runs")
}

const SMALL: &[&str] = &[
    "--set",
    "rounds=3",
    "--set",
    "data.per_class=40",
    "--set",
    "data.test_per_class=20",
];

#[test]
fn run_writes_metrics_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut args = vec!["run", "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    let o = fedmanip(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("round,global_accuracy,local_accuracy"));
    assert_eq!(lines.count(), 3);
    let summary = fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("\"final_accuracy\"") && summary.contains("\"config\""));
}

#[test]
fn out_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("env");
    let mut args = vec!["run", "--out", "ignored"];
    args.extend_from_slice(SMALL);
    let o = Command::new(env!("CARGO_BIN_EXE_fedmanip"))
        .args(&args)
        .env("FEDMANIP_OUT", &out)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("metrics.csv").exists());
    assert!(!dir.path().join("ignored").exists());
}

#[test]
fn sweep_writes_one_run_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let mut args = vec![
        "sweep",
        "--axis",
        "alpha",
        "--values",
        "2,8",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(SMALL);
    let o = fedmanip(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for v in ["alpha_2", "alpha_8"] {
        assert!(out.join(v).join("metrics.csv").exists());
    }
    assert!(fs::read_to_string(out.join("index.json"))
        .unwrap()
        .contains("model.alpha"));
}

#[test]
fn verify_reports_a_table() {
    let o = fedmanip(&["verify", "--suite", "numerics"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("PASS") && text.contains("mathcore"));
}

#[test]
fn bad_input_exits_with_code_two() {
    assert_eq!(
        fedmanip(&["verify", "--suite", "nope"]).status.code(),
        Some(2)
    );
    assert_eq!(
        fedmanip(&["run", "--set", "no_such_field=1", "--out", "x"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        fedmanip(&["sweep", "--axis", "seed", "--values", "1", "--out", "x"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        fedmanip(&["run", "--config", "/nonexistent.toml"])
            .status
            .code(),
        Some(2)
    );
}
