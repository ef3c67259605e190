#![allow(dead_code)]

use laxoc::problem::{make_builtin, ProblemSpec};
use laxoc::transform::generator_sample;
use rand::Rng;
use serde_json::Map;

pub const BUILTINS: [&str; 3] = ["vehicle2d", "gear4d", "formation12d"];

pub fn builtin(name: &str) -> ProblemSpec {
    make_builtin(name, &Map::new()).unwrap()
}

/// Random time in the horizon and state near the initial one.
pub fn random_point<R: Rng>(spec: &ProblemSpec, rng: &mut R) -> (f64, Vec<f64>) {
    let s = rng.gen_range(spec.horizon.0..=spec.horizon.1);
    let x = spec.initial_state.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect();
    (s, x)
}

/// Random member of the sampled hull: per block, a random convex combination
/// of one to three generator points.
pub fn random_feasible_b<R: Rng>(spec: &ProblemSpec, s: f64, x: &[f64], rng: &mut R) -> Vec<f64> {
    let gens = generator_sample(spec, s, x);
    let mut b = vec![0.0; spec.state_dim];
    for blk in &gens.blocks {
        let count = rng.gen_range(1..=3);
        let mut w: Vec<f64> = (0..count).map(|_| rng.gen_range(0.0..1.0)).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        for wi in w {
            let j = rng.gen_range(0..blk.points.len());
            for (&c, v) in blk.coords.iter().zip(&blk.points[j]) {
                b[c] += wi * v;
            }
        }
    }
    b
}

/// Random costate in `[-5, 5]^n`.
pub fn random_costate<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect()
}
