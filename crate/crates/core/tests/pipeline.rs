use laxoc::exec::Exec;
use laxoc::pipeline::{run_solve, write_solve_artifacts, RunConfig};
use laxoc::rollout::MitigationMode;
use std::path::Path;

fn config(problem: &str, k: usize) -> RunConfig {
    RunConfig {
        problem: problem.into(),
        k,
        ..RunConfig::default()
    }
}

fn data_rows(path: &Path) -> usize {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records().filter(|r| r.is_ok()).count()
}

/// summary.json minus the wall-clock timings.
fn summary_without_timings(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("summary.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v.as_object_mut().unwrap().remove("timings");
    v
}

#[test]
fn artifacts_have_expected_shape() {
    let cfg = config("gear4d", 40);
    let out = run_solve(&cfg, Exec::Sequential).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_solve_artifacts(&out, dir.path()).unwrap();
    let pieces = out.control.pieces();
    assert_eq!(data_rows(&dir.path().join("lax_trajectory.csv")), 41);
    assert_eq!(data_rows(&dir.path().join("control.csv")), 2 * pieces);
    assert_eq!(data_rows(&dir.path().join("rollout.csv")), pieces * cfg.substeps + 1);
}

#[test]
fn reruns_are_identical() {
    let cfg = config("gear4d", 30);
    let dirs: Vec<_> = (0..2)
        .map(|_| {
            let d = tempfile::tempdir().unwrap();
            write_solve_artifacts(&run_solve(&cfg, Exec::available()).unwrap(), d.path()).unwrap();
            d
        })
        .collect();
    assert_eq!(summary_without_timings(dirs[0].path()), summary_without_timings(dirs[1].path()));
    for name in ["lax_trajectory.csv", "control.csv", "rollout.csv"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}

#[test]
fn gear_respects_speed_limit_and_control_set() {
    let out = run_solve(&config("gear4d", 60), Exec::available()).unwrap();
    assert!(out.converged());
    assert!(out.result.x_star.iter().all(|x| x[1].abs() <= 0.1 + 1e-6));
    for v in &out.control.values {
        assert!(v[0] == 1.0 || v[0] == 2.0, "gear {}", v[0]);
        assert!((0.0..=1.0).contains(&v[1]), "torque {}", v[1]);
    }
    assert_eq!(out.summary.control_membership_violation, 0.0);
    assert!(out.summary.invariants.holds());
}

#[test]
fn min_residual_switches_at_most_once_per_step() {
    let k = 40;
    let cfg = RunConfig {
        mitigate: Some(MitigationMode::MinResidual),
        ..config("vehicle2d", k)
    };
    let out = run_solve(&cfg, Exec::available()).unwrap();
    assert!(out.summary.switch_count <= k);
    assert!(!out.summary.mitigation.as_ref().unwrap().certified);
}

#[test]
fn formation_run_keeps_invariants() {
    let out = run_solve(&config("formation12d", 40), Exec::available()).unwrap();
    assert!(out.converged());
    assert!(out.summary.invariants.holds(), "{:?}", out.summary.invariants);
    assert!(out.summary.max_atoms <= 13);
    assert_eq!(out.summary.control_membership_violation, 0.0);
}
