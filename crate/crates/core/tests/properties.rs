mod common;

use common::*;
use laxoc::decompose::{check_step, decompose_control, switch_schedule, ControlDecomposition, DecomposeMode};
use laxoc::discretize::{make_grid, transcribe};
use laxoc::exec::Exec;
use laxoc::linalg::{dist, norm};
use laxoc::oracle::hjb_grid_solve;
use laxoc::problem::{ControlSetDescriptor, ProblemSpec};
use laxoc::rollout::{growth_check, integrate, synthesize_alpha, PiecewiseControl};
use laxoc::solver::{seeded_rng, solve, SolveOptions};
use laxoc::transform::{generator_sample, hamiltonian, hstar, hstar_lp, membership_residual};
use proptest::prelude::*;
use rand::Rng;
use std::sync::Arc;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

fn name() -> impl Strategy<Value = &'static str> {
    prop::sample::select(BUILTINS.to_vec())
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn vehicle_has_unit_speed(a in -std::f64::consts::PI..std::f64::consts::PI, x0 in -3.0..3.0f64, x1 in -3.0..3.0f64) {
        let sp = builtin("vehicle2d");
        prop_assert!((norm(&sp.f(0.3, &[x0, x1], &[a])) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn structured_form_matches_dynamics(name in name(), seed in any::<u64>()) {
        let sp = builtin(name);
        let sf = sp.structured.as_ref().unwrap();
        let mut rng = seeded_rng(seed);
        let (s, x) = random_point(&sp, &mut rng);
        let a = sp.control_set.random_point(&mut rng);
        let m = (sf.m)(s);
        let mut phi = vec![0.0; sp.state_dim];
        (sf.phi)(s, &a, &mut phi);
        let f = sp.f(s, &x, &a);
        for i in 0..sp.state_dim {
            let mx: f64 = (0..sp.state_dim).map(|j| m[(i, j)] * x[j]).sum();
            prop_assert!((mx + phi[i] - f[i]).abs() <= 1e-9);
        }
        prop_assert!(((sf.lx)(s, &x) + (sf.la)(s, &a) - sp.stage(s, &x, &a)).abs() <= 1e-9);
    }

    #[test]
    fn sampled_conjugate_is_hamiltonian(name in name(), seed in any::<u64>()) {
        let sp = builtin(name);
        let mut rng = seeded_rng(seed);
        let (s, x) = random_point(&sp, &mut rng);
        let p = random_costate(sp.state_dim, &mut rng);
        let support = generator_sample(&sp, s, &x).support(&p);
        let (h, _) = hamiltonian(&sp, s, &x, &p).unwrap();
        prop_assert!((support - h).abs() <= 1e-6, "{} vs {}", support, h);
    }

    #[test]
    fn hstar_domain_is_the_hull(name in name(), seed in any::<u64>(), scale in 0.3..1.7f64) {
        let sp = builtin(name);
        let mut rng = seeded_rng(seed);
        let (s, x) = random_point(&sp, &mut rng);
        let mut b = random_feasible_b(&sp, s, &x, &mut rng);
        // Stretch the free coordinates so roughly half the draws leave the set.
        let eq = laxoc::transform::conv_control_set(&sp, s, &x).equalities;
        let pinned: Vec<usize> = (0..sp.state_dim).filter(|&i| eq.iter().any(|e| e.w[i] != 0.0)).collect();
        for (i, v) in b.iter_mut().enumerate() {
            if !pinned.contains(&i) {
                *v *= scale;
            }
        }
        let closed = hstar(&sp, s, &x, &b).unwrap().is_finite();
        let lp = hstar_lp(&sp, s, &x, &b).unwrap().is_finite();
        let member = membership_residual(&sp, s, &x, &b).unwrap() <= 1e-6;
        prop_assert_eq!(closed, member);
        prop_assert_eq!(lp, member);
    }

    #[test]
    fn hstar_midpoint_convex(name in name(), seed in any::<u64>()) {
        let sp = builtin(name);
        let mut rng = seeded_rng(seed);
        let (s, x) = random_point(&sp, &mut rng);
        let b1 = random_feasible_b(&sp, s, &x, &mut rng);
        let b2 = random_feasible_b(&sp, s, &x, &mut rng);
        let mid: Vec<f64> = b1.iter().zip(&b2).map(|(u, v)| 0.5 * (u + v)).collect();
        let h = |b: &[f64]| hstar(&sp, s, &x, b).unwrap().to_f64();
        prop_assert!(h(&mid) <= 0.5 * (h(&b1) + h(&b2)) + 1e-8);
    }

    #[test]
    fn decomposition_invariants(name in name(), seed in any::<u64>()) {
        let sp = builtin(name);
        let mut rng = seeded_rng(seed);
        let (s, x) = random_point(&sp, &mut rng);
        let b = random_feasible_b(&sp, s, &x, &mut rng);
        let closed = decompose_control(&sp, s, &x, &b, DecomposeMode::ClosedForm).unwrap();
        let rep = check_step(&sp, s, &x, &b, &closed);
        prop_assert!(rep.holds(), "{:?}", rep);
        for a in &closed {
            prop_assert!(sp.control_set.contains(&a.control, 1e-12));
        }
        let lp = decompose_control(&sp, s, &x, &b, DecomposeMode::Lp).unwrap();
        prop_assert!(lp.len() <= sp.state_dim + 1);
        let rep = check_step(&sp, s, &x, &b, &lp);
        prop_assert!(rep.holds(), "{:?}", rep);
        let cost = |atoms: &[laxoc::decompose::ControlAtom]| -> f64 {
            atoms.iter().map(|a| a.weight * sp.stage(s, &x, &a.control)).sum()
        };
        prop_assert!((cost(&closed) - cost(&lp)).abs() <= 1e-6);
    }

    #[test]
    fn schedule_tiles_each_step(weights in prop::collection::vec(prop::collection::vec(1e-6..1.0f64, 1..5), 1..12)) {
        let k = weights.len();
        let grid = make_grid(0.0, 3.7, k).unwrap();
        let steps = weights
            .iter()
            .map(|ws| {
                let total: f64 = ws.iter().sum();
                ws.iter()
                    .enumerate()
                    .map(|(i, w)| laxoc::decompose::ControlAtom { control: vec![i as f64], velocity: vec![], weight: w / total })
                    .collect()
            })
            .collect();
        let sched = switch_schedule(&grid, &ControlDecomposition { steps });
        prop_assert!(sched.times.windows(2).all(|w| w[1] > w[0]));
        for &t in grid.nodes() {
            prop_assert!(sched.times.contains(&t));
        }
        for (kk, ws) in weights.iter().enumerate() {
            let pieces: Vec<usize> = (0..sched.pieces()).filter(|&i| sched.step[i] == kk).collect();
            prop_assert_eq!(pieces.len(), ws.len());
            let total: f64 = ws.iter().sum();
            for (j, &i) in pieces.iter().enumerate() {
                let len = sched.times[i + 1] - sched.times[i];
                prop_assert!((len - ws[j] / total * grid.delta(kk)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rollouts_respect_growth_bound(name in name(), seed in any::<u64>(), pieces in 1usize..12) {
        let sp = builtin(name);
        let mut rng = seeded_rng(seed);
        let (t0, t1) = sp.horizon;
        let mut cuts: Vec<f64> = (0..pieces - 1).map(|_| rng.gen_range(t0..t1)).collect();
        cuts.push(t0);
        cuts.push(t1);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let values = (0..cuts.len() - 1).map(|_| sp.control_set.random_point(&mut rng)).collect();
        let ctrl = PiecewiseControl::new(cuts, values).unwrap();
        let r = integrate(&sp, &ctrl, &sp.initial_state, 4).unwrap();
        prop_assert_eq!(&r.states[0], &sp.initial_state);
        prop_assert!(r.cost.is_finite());
        prop_assert!(growth_check(&sp, &r).worst_ratio <= 1.0);
        prop_assert_eq!(ctrl.membership_violation(&sp), 0.0);
    }
}

proptest! {
    #![proptest_config(config(8))]

    #[test]
    fn synthesized_controls_are_admissible(name in prop::sample::select(vec!["vehicle2d", "gear4d"]), seed in any::<u64>()) {
        let sp = builtin(name);
        let mut rng = seeded_rng(seed);
        let grid = make_grid(sp.horizon.0, sp.horizon.1, 6).unwrap();
        let mut x = vec![sp.initial_state.clone()];
        let mut steps = Vec::new();
        for k in 0..6 {
            let xk = x[k].clone();
            let b = random_feasible_b(&sp, grid.nodes()[k], &xk, &mut rng);
            steps.push(decompose_control(&sp, grid.nodes()[k], &xk, &b, DecomposeMode::ClosedForm).unwrap());
            x.push(xk.iter().zip(&b).map(|(xi, bi)| xi - grid.delta(k) * bi).collect());
        }
        let ctrl = synthesize_alpha(&switch_schedule(&grid, &ControlDecomposition { steps }));
        prop_assert_eq!(ctrl.membership_violation(&sp), 0.0);
    }

    #[test]
    fn transcribed_dynamics_are_exact(name in name(), seed in any::<u64>()) {
        let sp = builtin(name);
        let mut rng = seeded_rng(seed);
        let grid = make_grid(sp.horizon.0, sp.horizon.1, 10).unwrap();
        let prog = transcribe(&sp, &grid, true).unwrap();
        let beta: Vec<Vec<f64>> = (0..10).map(|_| (0..sp.state_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let x = prog.states_from_velocities(&beta);
        prop_assert_eq!(&x[0], &sp.initial_state);
        for k in 0..10 {
            for i in 0..sp.state_dim {
                prop_assert!((x[k + 1][i] - (x[k][i] - grid.delta(k) * beta[k][i])).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn best_objective_never_increases() {
    let sp = builtin("gear4d");
    let grid = make_grid(0.0, 1.0, 30).unwrap();
    let prog = transcribe(&sp, &grid, false).unwrap();
    let r = solve(&prog, &SolveOptions::default()).unwrap();
    assert!(r.history.len() > 1);
    assert!(r.history.windows(2).all(|w| w[1] <= w[0]), "{:?}", r.history);
}

#[test]
fn riemann_error_halves() {
    // Vehicle with the smooth relaxed velocity β(s) = 0.5 (cos 3s, sin 3s):
    // only the terminal state depends on K.
    let sp = builtin("vehicle2d");
    let exact = {
        let x0 = &sp.initial_state;
        let ix = 0.5 * 3f64.sin() / 3.0;
        let iy = 0.5 * (1.0 - 3f64.cos()) / 3.0;
        sp.terminal(&[x0[0] - ix, x0[1] - iy])
    };
    let errors: Vec<f64> = [20, 40, 80, 160]
        .iter()
        .map(|&k| {
            let grid = make_grid(0.0, 1.0, k).unwrap();
            let prog = transcribe(&sp, &grid, true).unwrap();
            let beta: Vec<Vec<f64>> = grid.nodes()[..k].iter().map(|t| vec![0.5 * (3.0 * t).cos(), 0.5 * (3.0 * t).sin()]).collect();
            (prog.reduced_objective(&beta).unwrap().to_f64() - exact).abs()
        })
        .collect();
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.5..=2.5).contains(&ratio), "{errors:?}");
    }
}

#[test]
fn masked_nodes_stay_infinite() {
    let spec = ProblemSpec::new(
        "walled",
        2,
        (0.0, 0.5),
        vec![0.0, 0.0],
        Arc::new(|_, _, a, out| {
            out[0] = a[0].cos();
            out[1] = a[0].sin();
        }),
        Arc::new(|_, _, _| 0.0),
        Arc::new(|x| dist(x, &[1.0, 0.0])),
        ControlSetDescriptor::Box {
            lower: vec![-std::f64::consts::PI],
            upper: vec![std::f64::consts::PI],
        },
    )
    .unwrap()
    .with_constraint(Arc::new(|_, x| x[0] - 0.5));
    let grid = make_grid(0.0, 0.5, 5).unwrap();
    let vf = hjb_grid_solve(&spec, &[-1.0, -1.0], &[1.0, 1.0], 41, &grid, Exec::available()).unwrap();
    let mut masked = 0;
    for i in 0..vf.node_count() {
        if vf.node(i)[0] > 0.5 + 1e-12 {
            masked += 1;
            assert!(vf.values.iter().all(|slice| slice[i].is_infinite()));
        }
    }
    assert!(masked > 0);
}
