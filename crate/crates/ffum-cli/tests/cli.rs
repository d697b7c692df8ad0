//! Black-box tests of the command-line interface: spawned runs, output
//! files, exit codes, and sweep behavior.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ffum"))
}

/// Small backdoor scenario that pretrains in a few hundred milliseconds.
fn tiny_config() -> Value {
    json!({
        "dataset": {"synthetic": {"num_classes": 3, "per_class": 40, "dim": 9, "spread": 0.6}},
        "model": {"input_dim": 9, "hidden_dims": [8], "num_classes": 3, "use_layer_norm": true},
        "scenario": {"level": "client", "num_clients": 3, "target_clients": [0],
                     "corrupted_fraction": 0.8, "test_fraction": 0.2},
        "corruption": {"kind": "backdoor", "backdoor_target_class": 0, "trigger_size": 2,
                       "trigger_corner": "bottom_right", "trigger_value": 1.0},
        "pretrain": {"rounds": 3, "local_epochs": 1, "batch_size": 16, "learning_rate": 0.3,
                     "supervised": "kl"},
        "methods": [
            {"ffum": {"rounds_r": 1, "post_rounds": 1, "eta_max": 0.5, "eta_min": 0.3,
                      "batch_size": 16}},
            "retrain_oracle"
        ],
        "eval": {"mia": false},
        "seed": 5
    })
}

fn write_config(dir: &Path, value: &Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
    path
}

fn run_in(dir: &Path, value: &Value, extra: &[&str]) -> Output {
    let cfg = write_config(dir, value);
    let out = dir.join("out");
    bin()
        .args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .args(extra)
        .output()
        .expect("binary spawns")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn code_of(output: &Output) -> i32 {
    output.status.code().expect("process was not killed by a signal")
}

#[test]
fn run_writes_reports_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let output = run_in(dir.path(), &tiny_config(), &[]);
    assert_eq!(code_of(&output), 0, "stderr: {}", stderr_of(&output));

    let out = dir.path().join("out");
    for name in
        ["report.json", "metrics.csv", "curves.csv", "pretrained.ckpt", "ffum-kl-js.ckpt", "retrain_oracle.ckpt"]
    {
        assert!(out.join(name).exists(), "{name} was not written");
    }

    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["n_clients"], 3);
    assert_eq!(report["methods"].as_array().unwrap().len(), 2);
    assert!(report["config_sha256"].as_str().unwrap().len() == 64);

    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let header = metrics.lines().next().unwrap();
    assert_eq!(
        header,
        "method,n_clients,level,removed_pct,pretrain_test_acc,test_acc,retain_acc,forget_acc,backdoor_asr,mia_score,comm_rounds"
    );
    // One row per method; the pretrained accuracy rides along as a column.
    assert_eq!(metrics.lines().count(), 3);

    let params = ffum_core::load_checkpoint(&out.join("ffum-kl-js.ckpt")).unwrap();
    assert!(params.dim() > 0);
}

#[test]
fn run_rejects_unknown_fields_naming_them() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg["pretrain"]["rouns"] = json!(4);
    let output = run_in(dir.path(), &cfg, &[]);
    assert_eq!(code_of(&output), 1);
    assert!(stderr_of(&output).contains("rouns"), "stderr: {}", stderr_of(&output));
}

#[test]
fn run_rejects_bad_values_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg["methods"][0]["ffum"]["alpha"] = json!(-1.0);
    let output = run_in(dir.path(), &cfg, &[]);
    assert_eq!(code_of(&output), 1);
    assert!(stderr_of(&output).contains("alpha"), "stderr: {}", stderr_of(&output));
}

#[test]
fn run_reports_missing_config_files() {
    let output = bin().args(["run", "/nonexistent/config.json"]).output().unwrap();
    assert_eq!(code_of(&output), 1);
}

#[test]
fn strict_mode_exits_two_when_a_check_fails() {
    let dir = tempfile::tempdir().unwrap();
    // A huge descent rate saturates the model into garbage and there are
    // no repair rounds after it, so the recovery check fails.
    let mut cfg = tiny_config();
    cfg["methods"] = json!([{"ffum": {
        "rounds_r": 1, "post_rounds": 0,
        "eta_max": 0.5, "eta_min": 50.0,
        "batch_size": 16
    }}]);

    let relaxed = run_in(dir.path(), &cfg, &[]);
    assert_eq!(code_of(&relaxed), 0, "stderr: {}", stderr_of(&relaxed));

    let strict_dir = tempfile::tempdir().unwrap();
    let strict = run_in(strict_dir.path(), &cfg, &["--strict"]);
    assert_eq!(code_of(&strict), 2, "stderr: {}", stderr_of(&strict));
    assert!(stderr_of(&strict).contains("check failed"));
}

#[test]
fn numeric_blowups_exit_three_with_phase_context() {
    let dir = tempfile::tempdir().unwrap();
    // Without layer normalization to rescale the pathology away, a huge
    // first update overflows the next forward pass.
    let mut cfg = tiny_config();
    cfg["model"]["use_layer_norm"] = json!(false);
    cfg["pretrain"]["learning_rate"] = json!(1e200);
    let output = run_in(dir.path(), &cfg, &[]);
    assert_eq!(code_of(&output), 3, "stderr: {}", stderr_of(&output));
    let err = stderr_of(&output);
    assert!(
        err.contains("pretrain phase, round 0"),
        "stderr does not locate the failure: {err}"
    );
}

#[test]
fn seed_override_is_echoed_and_changes_the_run() {
    let dir1 = tempfile::tempdir().unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let a = run_in(dir1.path(), &cfg, &["--seed", "1"]);
    let b = run_in(dir2.path(), &cfg, &["--seed", "2"]);
    assert_eq!(code_of(&a), 0);
    assert_eq!(code_of(&b), 0);

    let report: Value = serde_json::from_str(
        &std::fs::read_to_string(dir1.path().join("out/report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["config"]["seed"], 1, "report must echo the effective seed");

    let m1 = std::fs::read(dir1.path().join("out/metrics.csv")).unwrap();
    let m2 = std::fs::read(dir2.path().join("out/metrics.csv")).unwrap();
    assert_ne!(m1, m2, "different seeds should give different data and metrics");
}

#[test]
fn sweep_writes_table_and_per_point_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg["scenario"] = json!({"level": "data", "num_clients": 3, "forget_fraction": 0.05,
                             "test_fraction": 0.2});
    let path = write_config(dir.path(), &cfg);
    let out = dir.path().join("sweep");
    let output = bin()
        .args([
            "sweep",
            path.to_str().unwrap(),
            "--axis",
            "forget_fraction",
            "--values",
            "0.05, 0.2",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(code_of(&output), 0, "stderr: {}", stderr_of(&output));

    for point in ["point-0", "point-1"] {
        assert!(out.join(point).join("report.json").exists(), "{point} has no report");
    }
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(
        table.lines().next().unwrap(),
        "method,n_clients,removed_pct,pretrain_test_acc,unlearn_test_acc,mia_score"
    );
    // Two methods per point.
    assert_eq!(table.lines().count(), 5);

    // Each point runs under its own derived seed, so the two points are
    // independent realizations of the same experiment shape.
    let r0: Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("point-0/report.json")).unwrap(),
    )
    .unwrap();
    let r1: Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("point-1/report.json")).unwrap(),
    )
    .unwrap();
    assert_ne!(r0["config"]["seed"], r1["config"]["seed"]);
}

#[test]
fn sweep_keeps_finished_points_when_one_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &tiny_config());
    let out = dir.path().join("sweep");
    let output = bin()
        .args([
            "sweep",
            path.to_str().unwrap(),
            "--axis",
            "method",
            "--values",
            "retrain_oracle,nope",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(code_of(&output), 1, "stderr: {}", stderr_of(&output));
    assert!(stderr_of(&output).contains("nope"), "stderr: {}", stderr_of(&output));

    // The successful point is fully written and listed in the table; the
    // failed point is reported but does not erase it.
    assert!(out.join("point-0/report.json").exists());
    assert!(!out.join("point-1/report.json").exists());
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(table.lines().nth(1).unwrap().starts_with("retrain_oracle,"));
}

#[test]
fn sweep_rejects_an_empty_value_list() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &tiny_config());
    let output = bin()
        .args(["sweep", path.to_str().unwrap(), "--axis", "method", "--values", " , "])
        .output()
        .unwrap();
    assert_eq!(code_of(&output), 1);
    assert!(stderr_of(&output).contains("at least one axis value"));
}

#[test]
fn invalid_thread_cap_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &tiny_config());
    let output = bin()
        .args(["run", path.to_str().unwrap()])
        .env("FFUM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code_of(&output), 1);
    assert!(stderr_of(&output).contains("FFUM_THREADS"));
}
