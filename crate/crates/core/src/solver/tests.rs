use super::*;
use crate::exec::Exec;
use crate::discretize::{make_grid, transcribe};
use crate::problem::make_builtin;
use serde_json::Map;

fn program(name: &str, k: usize) -> TranscribedProgram {
    let spec = make_builtin(name, &Map::new()).unwrap();
    let grid = make_grid(spec.horizon.0, spec.horizon.1, k).unwrap();
    transcribe(&spec, &grid, false).unwrap()
}

#[test]
fn vehicle_straight_line() {
    let p = program("vehicle2d", 100);
    let r = solve(&p, &SolveOptions::default()).unwrap();
    assert!((r.objective - (1.25f64.sqrt() - 1.0)).abs() < 1e-3);
    assert!(r.converged());
}

#[test]
fn gear_feasible() {
    let p = program("gear4d", 100);
    let r = solve(&p, &SolveOptions::default()).unwrap();
    let worst = r.x_star.iter().map(|x| x[1].abs()).fold(0.0, f64::max);
    assert!(worst <= 0.1 + 1e-6);
    assert!(r.converged());
}

#[test]
fn auto_choice() {
    assert_eq!(auto_algorithm(&program("formation12d", 4)), Algorithm::InteriorPoint);
    assert_eq!(auto_algorithm(&program("gear4d", 4)), Algorithm::AugmentedLagrangian);
    assert_eq!(auto_algorithm(&program("vehicle2d", 4)), Algorithm::AugmentedLagrangian);
}

#[test]
fn formation_restarts_agree() {
    let p = program("formation12d", 100);
    let runs = solve_restarts(&p, &SolveOptions::default(), 3, Exec::available());
    let objs: Vec<f64> = runs.into_iter().map(|r| r.unwrap()).inspect(|r| assert!(r.converged())).map(|r| r.objective).collect();
    let spread = objs.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b)) - objs.iter().fold(f64::INFINITY, |a, b| a.min(*b));
    assert!(spread <= 1e-4, "{objs:?}");
}

#[test]
fn interior_point_matches_augmented_lagrangian_on_vehicle() {
    let p = program("vehicle2d", 50);
    let al = solve(&p, &SolveOptions { algorithm: Algorithm::AugmentedLagrangian, ..Default::default() }).unwrap();
    let ip = solve(&p, &SolveOptions { algorithm: Algorithm::InteriorPoint, ..Default::default() }).unwrap();
    assert!(al.converged() && ip.converged());
    assert!((al.objective - ip.objective).abs() <= 1e-5 * (1.0 + al.objective));
}

#[test]
fn interior_point_rejects_state_constraints() {
    let p = program("gear4d", 10);
    let r = solve(&p, &SolveOptions { algorithm: Algorithm::InteriorPoint, ..Default::default() });
    assert!(matches!(r, Err(SolveError::BadOptions(_))));
}

#[test]
fn smoothed_and_epigraph_agree_on_vehicle() {
    let p = program("vehicle2d", 40);
    let base = SolveOptions { algorithm: Algorithm::AugmentedLagrangian, ..Default::default() };
    let a = solve(&p, &SolveOptions { formulation: Formulation::Smoothed, ..base.clone() }).unwrap();
    let b = solve(&p, &SolveOptions { formulation: Formulation::Epigraph, ..base }).unwrap();
    assert!((a.objective - b.objective).abs() < 1e-5, "{} {}", a.objective, b.objective);
}

#[test]
fn deterministic_given_seed() {
    for name in ["vehicle2d", "formation12d"] {
        let p = program(name, 30);
        let opts = SolveOptions { random_init: true, random_seed: 9, ..Default::default() };
        let a = solve(&p, &opts).unwrap();
        let b = solve(&p, &opts).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn objective_scaling_keeps_argmin() {
    for name in ["vehicle2d", "gear4d", "formation12d"] {
        let p = program(name, 40);
        let a = solve(&p, &SolveOptions::default()).unwrap();
        let b = solve(&p, &SolveOptions { objective_scale: 7.0, ..Default::default() }).unwrap();
        assert!((a.objective - b.objective).abs() <= 1e-4 * (1.0 + a.objective.abs()), "{name}");
    }
}

#[test]
fn infeasible_initial_state_is_certified() {
    use crate::problem::{ControlSetDescriptor, ProblemSpec};
    use std::sync::Arc;
    let spec = ProblemSpec::new(
        "toy",
        1,
        (0.0, 1.0),
        vec![0.0],
        Arc::new(|_, _, a, out| out[0] = a[0]),
        Arc::new(|_, _, _| 0.0),
        Arc::new(|_| 0.0),
        ControlSetDescriptor::Box { lower: vec![-1.0], upper: vec![1.0] },
    )
    .unwrap()
    .with_constraint(Arc::new(|_, x| x[0] * x[0] + 1.0));
    let grid = make_grid(0.0, 1.0, 4).unwrap();
    let prog = transcribe(&spec, &grid, true).unwrap();
    assert!(matches!(solve(&prog, &SolveOptions::default()), Err(SolveError::Infeasible(_))));
}

fn check_gradient(name: &str, k: usize, opts: SolveOptions) {
    let p = program(name, k);
    let eng = build_engine(&p, &opts);
    let z = eng.initial_point(&SolveOptions { random_init: true, ..opts.clone() });
    let mut rng = seeded_rng(3);
    use rand::Rng;
    let par = Params {
        mu: 0.05,
        lam: (0..eng.rows_count()).map(|_| rng.gen_range(0.0..1.0)).collect(),
        rho: 2.0,
        eta: (0..if eng.full { eng.k * eng.n } else { 0 }).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        rho_dyn: 3.0,
        cone: (0..eng.cone_len).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        rho_cone: 1.5,
    };
    let mut g = vec![0.0; z.len()];
    eng.value_grad(&z, &par, Some(&mut g));
    let step = (z.len() / 40).max(1);
    for j in (0..z.len()).step_by(step) {
        let h = 1e-6;
        let mut zp = z.clone();
        zp[j] += h;
        let up = eng.value_grad(&zp, &par, None);
        zp[j] -= 2.0 * h;
        let dn = eng.value_grad(&zp, &par, None);
        let fd = (up - dn) / (2.0 * h);
        assert!((fd - g[j]).abs() <= 1e-5 * (1.0 + fd.abs()), "{name} {j}: {fd} vs {}", g[j]);
    }
}

#[test]
fn gradients_match_differences() {
    for name in ["vehicle2d", "gear4d", "formation12d"] {
        for formulation in [Formulation::Smoothed, Formulation::Epigraph] {
            for unreduced in [false, true] {
                let opts = SolveOptions {
                    formulation,
                    unreduced,
                    ..SolveOptions::default()
                };
                check_gradient(name, 12, opts);
            }
        }
    }
}
