use std::path::Path;
use std::process::{Command, Output};

fn laxoc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_laxoc")).args(args).output().unwrap()
}

fn write_config(dir: &Path, json: &str) -> String {
    let p = dir.join("run.json");
    std::fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn list_problems_names_builtins() {
    let out = laxoc(&["list-problems"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["vehicle2d", "gear4d", "formation12d"] {
        assert!(text.contains(name));
    }
}

#[test]
fn solve_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = laxoc(&["solve", "--k", "40", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["lax_trajectory.csv", "control.csv", "rollout.csv", "summary.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["problem"], "vehicle2d");
    assert_eq!(summary["k"], 40);
}

#[test]
fn formation_max_likelihood_writes_agents() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"problem": "formation12d", "k": 40}"#);
    let out_dir = dir.path().join("out");
    let out = laxoc(&["solve", "--config", &cfg, "--mitigate", "max_likelihood", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for l in 1..=3 {
        assert!(out_dir.join(format!("agent_{l}_lax.csv")).exists());
        assert!(out_dir.join(format!("agent_{l}_rollout.csv")).exists());
    }
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["mitigation"]["certified"], false);
}

#[test]
fn vehicle_hjb_oracle_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"k": 50, "oracle": {"mode": "hjb", "resolution": 81, "tolerance": 5e-2}}"#);
    let out_dir = dir.path().join("out");
    let out = laxoc(&["oracle", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("oracle.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert!(out_dir.join("value_t0.csv").exists());
}

#[test]
fn convergence_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = laxoc(&["convergence", "--ks", "10,20", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(out_dir.join("convergence.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn precondition_and_config_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let hjb = write_config(dir.path(), r#"{"problem": "formation12d", "oracle": {"mode": "hjb"}}"#);
    assert_eq!(laxoc(&["oracle", "--config", &hjb]).status.code(), Some(3));
    let unknown = write_config(dir.path(), r#"{"problme": "vehicle2d"}"#);
    assert_eq!(laxoc(&["solve", "--config", &unknown]).status.code(), Some(3));
    assert_eq!(laxoc(&["solve", "--mitigate", "sometimes"]).status.code(), Some(3));
    assert_eq!(laxoc(&["solve", "--k", "0"]).status.code(), Some(3));
}

#[test]
fn min_residual_rejects_control_dependent_cost() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"problem": "gear4d", "k": 20}"#);
    let out = laxoc(&["solve", "--config", &cfg, "--mitigate", "min_residual", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
