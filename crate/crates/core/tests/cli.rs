use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn penlik(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_penlik")).args(args).current_dir(dir).output().unwrap()
}

fn ok_json(args: &[&str], dir: &Path) -> Value {
    let out = penlik(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error_object(out: &Output) -> Value {
    assert!(!out.status.success());
    serde_json::from_slice(&out.stderr).unwrap()
}

fn simulate_linear(dir: &Path) {
    ok_json(
        &["simulate", "--kind", "linear", "--n", "200", "--beta", "3,1.5,0,0,2", "--seed", "3", "--out", "d.csv"],
        dir,
    );
}

#[test]
fn output_wrapper_records_command_seed_and_generator() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok_json(&["threshold", "--z", "2,0.5,-3", "--lambda", "1", "--penalty", "l1", "--seed", "9"], dir.path());
    assert_eq!(v["command"], "threshold");
    assert_eq!(v["seed"], 9);
    assert_eq!(v["rng"], "chacha8");
    assert_eq!(v["result"]["coefficients"], serde_json::json!([1.0, 0.0, -2.0]));
}

#[test]
fn errors_are_json_objects_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let missing = penlik(&["fit", "--data", "absent.csv", "--lambda", "1"], dir.path());
    assert_eq!(missing.status.code(), Some(1));
    let e = error_object(&missing);
    assert_eq!(e["error"]["code"], "io");
    assert!(e["error"]["message"].as_str().unwrap().contains("absent.csv"));

    let usage = penlik(&["fit", "--no-such-flag"], dir.path());
    assert_eq!(usage.status.code(), Some(2));
    assert_eq!(error_object(&usage)["error"]["code"], "usage");

    simulate_linear(dir.path());
    let no_lambda = penlik(&["fit", "--data", "d.csv"], dir.path());
    assert_eq!(error_object(&no_lambda)["error"]["code"], "invalid_input");

    let bad_penalty = penlik(&["fit", "--data", "d.csv", "--lambda", "1", "--penalty", "scad", "--a", "1.5"], dir.path());
    assert_eq!(error_object(&bad_penalty)["error"]["code"], "invalid_input");
}

#[test]
fn config_file_supplies_flags_and_command_line_wins() {
    let dir = tempfile::tempdir().unwrap();
    simulate_linear(dir.path());
    std::fs::write(dir.path().join("c.json"), r#"{"data":"d.csv","penalty":"l1","lambda":0.5,"seed":4}"#).unwrap();
    let from_config = ok_json(&["fit", "--config", "c.json"], dir.path());
    assert_eq!(from_config["seed"], 4);
    assert_eq!(from_config["result"]["lambda"], 0.5);
    let overridden = ok_json(&["fit", "--config", "c.json", "--lambda", "0.1"], dir.path());
    assert_eq!(overridden["result"]["lambda"], 0.1);

    std::fs::write(dir.path().join("t.json"), r#"{"z":[1.0,-0.01],"universal":true,"n":1024,"penalty":"l1"}"#).unwrap();
    let t = ok_json(&["threshold", "--config", "t.json"], dir.path());
    assert_eq!(t["result"]["coefficients"][1], 0.0);
}

#[test]
fn cov_method_can_come_from_config() {
    let dir = tempfile::tempdir().unwrap();
    ok_json(
        &["simulate", "--kind", "ar", "--n", "300", "--d", "4", "--coefficients", "0.5", "--out", "w.csv"],
        dir.path(),
    );
    std::fs::write(dir.path().join("c.json"), r#"{"method":"chol","data":"w.csv","lambda":0.0}"#).unwrap();
    let v = ok_json(&["cov", "--config", "c.json"], dir.path());
    assert_eq!(v["command"], "cov");
    assert_eq!(v["result"]["phi"].as_array().unwrap().len(), 4);
}

#[test]
fn gcv_fit_recovers_strong_signal() {
    let dir = tempfile::tempdir().unwrap();
    simulate_linear(dir.path());
    let out = penlik(&["fit", "--data", "d.csv", "--gcv", "--out", "fit.json"], dir.path());
    assert!(out.status.success() && out.stdout.is_empty());
    let fit: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("fit.json")).unwrap()).unwrap();
    let active: Vec<u64> = fit["result"]["active_set"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    for j in [0, 1, 4] {
        assert!(active.contains(&j), "{active:?}");
    }
    assert!(fit["result"]["stationarity_residual"].as_f64().unwrap() <= 1e-6 * 200.0);
    assert_eq!(fit["result"]["names"][0], "x1");
}

#[test]
fn cox_and_factor_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let sim = ok_json(
        &["simulate", "--kind", "survival", "--n", "150", "--beta", "1,0,-1", "--censoring-rate", "0.2", "--out", "s.csv"],
        dir.path(),
    );
    assert!(sim["result"]["events"].as_u64().unwrap() > 0);
    let cox = ok_json(&["fit", "--family", "cox", "--data", "s.csv", "--lambda", "0.05"], dir.path());
    assert_eq!(cox["result"]["beta"].as_array().unwrap().len(), 3);

    ok_json(&["simulate", "--kind", "factor", "--n", "80", "--d", "6", "--k", "2", "--out", "r.csv"], dir.path());
    let f = ok_json(&["cov", "factor", "--data", "r.csv", "--factors", "r_factors.csv"], dir.path());
    assert_eq!(f["result"]["sigma"].as_array().unwrap().len(), 6);
}

#[test]
fn classify_accepts_zero_one_labels() {
    let dir = tempfile::tempdir().unwrap();
    ok_json(&["simulate", "--kind", "logistic", "--n", "200", "--beta", "2,-2,0", "--out", "l.csv"], dir.path());
    let v = ok_json(&["classify", "--data", "l.csv", "--loss", "hinge", "--penalty", "l1", "--lambda", "0.01"], dir.path());
    assert!(v["result"]["training_error_rate"].as_f64().unwrap() < 0.3);
}

#[test]
fn oracle_subset_refuses_wide_designs() {
    let dir = tempfile::tempdir().unwrap();
    simulate_linear(dir.path());
    let v = ok_json(&["oracle-subset", "--data", "d.csv", "--lambda", "0.3"], dir.path());
    assert_eq!(v["result"]["subset"], serde_json::json!([0, 1, 4]));
    let refused = penlik(&["oracle-subset", "--data", "d.csv", "--lambda", "0.3", "--max-d", "3"], dir.path());
    assert_eq!(error_object(&refused)["error"]["code"], "refused");
}

#[test]
fn experiment_seed_override_changes_reports() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("e.json"),
        r#"{"experiment":"cholesky","seed":1,"replicates":2,"n":200,"d":4,"coefficients":[0.5]}"#,
    )
    .unwrap();
    ok_json(&["experiment", "--config", "e.json", "--out", "a"], dir.path());
    ok_json(&["experiment", "--config", "e.json", "--out", "b", "--seed", "2"], dir.path());
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_ne!(read("a/replicates.json"), read("b/replicates.json"));
    let summary: Value = serde_json::from_slice(&read("a/summary.json")).unwrap();
    assert_eq!(summary["run"]["config"]["seed"], 1);
    assert!(summary["summary"]["off_band_false_positive_rate"].is_number());

    let missing = penlik(&["experiment", "--out", "c"], dir.path());
    assert_eq!(error_object(&missing)["error"]["code"], "invalid_input");
}
