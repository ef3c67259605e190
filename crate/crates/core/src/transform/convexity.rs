//! Sampled checks of the two convexity conditions.
//!
//! Condition 1 concerns the discretized original problem (costs convex,
//! dynamics affine in state and control, control set convex). Condition 2
//! concerns the discretized relaxed problem (dynamics split as `M x + φ`,
//! stage cost split as `Lx + La`, `Lx`, `g`, `c` convex in `x`, and the joint
//! set `{(x, b) : b ∈ Conv(B(s, x))}` convex).

use super::{hstar, FEAS_TOL};
use crate::linalg::{dist, mat_vec};
use crate::problem::ProblemSpec;
use rand::Rng;
use serde::Serialize;

const PAIRS: usize = 200;
const JOINT_PAIRS: usize = 40;
const SPLIT_TOL: f64 = 1e-9;
const SAMPLE_RADIUS: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Inconclusive,
}

impl CheckStatus {
    fn all(items: &[ConditionItem]) -> Self {
        if items.iter().any(|i| i.status == CheckStatus::Fail) {
            CheckStatus::Fail
        } else if items.iter().any(|i| i.status == CheckStatus::Inconclusive) {
            CheckStatus::Inconclusive
        } else {
            CheckStatus::Pass
        }
    }
}

/// One row of the report. `worst` is the largest sampled violation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionItem {
    pub name: String,
    pub status: CheckStatus,
    pub worst: f64,
}

impl ConditionItem {
    fn from_violation(name: &str, worst: f64, tol: f64) -> Self {
        Self {
            name: name.to_string(),
            status: if worst <= tol { CheckStatus::Pass } else { CheckStatus::Fail },
            worst,
        }
    }

    fn inconclusive(name: &str) -> Self {
        Self {
            name: name.to_string(),
            status: CheckStatus::Inconclusive,
            worst: f64::NAN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub condition1: CheckStatus,
    pub condition2: CheckStatus,
    pub condition1_items: Vec<ConditionItem>,
    pub condition2_items: Vec<ConditionItem>,
}

struct Sampler<'a> {
    spec: &'a ProblemSpec,
    rng: rand_chacha::ChaCha8Rng,
}

impl Sampler<'_> {
    fn time(&mut self) -> f64 {
        let (t0, t1) = self.spec.horizon;
        self.rng.gen_range(t0..=t1)
    }

    fn state(&mut self) -> Vec<f64> {
        let x0 = &self.spec.initial_state;
        x0.iter().map(|v| v + self.rng.gen_range(-SAMPLE_RADIUS..=SAMPLE_RADIUS)).collect()
    }

    fn control(&mut self) -> Vec<f64> {
        self.spec.control_set.random_point(&mut self.rng)
    }
}

fn midpoint(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()
}

/// Largest midpoint-convexity violation `h(mid) − avg` of a scalar function,
/// relative to `1 + |avg|`.
fn midpoint_violation(pairs: usize, mut draw: impl FnMut() -> (Vec<f64>, Vec<f64>), h: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let (p, q) = draw();
        let avg = 0.5 * (h(&p) + h(&q));
        let mid = h(&midpoint(&p, &q));
        if avg.is_finite() && mid.is_finite() {
            worst = worst.max((mid - avg) / (1.0 + avg.abs()));
        }
    }
    worst
}

/// Runs the sampled checks. Deterministic: the sampler is seeded.
pub fn check_convexity_conditions(spec: &ProblemSpec) -> ConvexityReport {
    let mut sm = Sampler {
        spec,
        rng: crate::solver::seeded_rng(0x5eed),
    };
    let n = spec.state_dim;
    let mut c1 = Vec::new();
    let mut c2 = Vec::new();

    // Terminal cost and state constraint enter both conditions.
    let g_worst = midpoint_violation(PAIRS, || (sm.state(), sm.state()), |x| spec.terminal(x));
    let g_item = ConditionItem::from_violation("terminal cost convex in x", g_worst, SPLIT_TOL);
    let c_item = if spec.state_constraint.is_some() {
        let mut worst = 0.0f64;
        for _ in 0..PAIRS {
            let (s, x, y) = (sm.time(), sm.state(), sm.state());
            let avg = 0.5 * (spec.constraint(s, &x) + spec.constraint(s, &y));
            let mid = spec.constraint(s, &midpoint(&x, &y));
            worst = worst.max((mid - avg) / (1.0 + avg.abs()));
        }
        ConditionItem::from_violation("state constraint convex in x", worst, SPLIT_TOL)
    } else {
        ConditionItem::from_violation("state constraint convex in x", 0.0, SPLIT_TOL)
    };

    // Condition 1: costs split and convex, f affine jointly, A convex.
    match &spec.structured {
        Some(sf) => {
            let s = sm.time();
            let lx = midpoint_violation(PAIRS, || (sm.state(), sm.state()), |x| (sf.lx)(s, x));
            c1.push(ConditionItem::from_violation("stage cost Lx convex in x", lx, SPLIT_TOL));
            let la = midpoint_violation(PAIRS, || (sm.control(), sm.control()), |a| (sf.la)(s, a));
            c1.push(ConditionItem::from_violation("stage cost La convex in a", la, SPLIT_TOL));
        }
        None => c1.push(ConditionItem::inconclusive("stage cost split and convex")),
    }
    c1.push(g_item.clone());
    c1.push(c_item.clone());
    let mut affine = 0.0f64;
    for _ in 0..PAIRS {
        let s = sm.time();
        let (x, y) = (sm.state(), sm.state());
        let (a, b) = (sm.control(), sm.control());
        let fx = spec.f(s, &x, &a);
        let fy = spec.f(s, &y, &b);
        let fm = spec.f(s, &midpoint(&x, &y), &midpoint(&a, &b));
        let scale = 1.0 + crate::linalg::norm(&fx).max(crate::linalg::norm(&fy));
        affine = affine.max(dist(&fm, &midpoint(&fx, &fy)) / scale);
    }
    c1.push(ConditionItem::from_violation("dynamics affine in (x, a)", affine, SPLIT_TOL));
    c1.push(match spec.control_set.is_convex() {
        Some(true) => ConditionItem::from_violation("control set convex", 0.0, 0.0),
        Some(false) => ConditionItem::from_violation("control set convex", f64::INFINITY, 0.0),
        None => ConditionItem::inconclusive("control set convex"),
    });

    // Condition 2.
    match &spec.structured {
        Some(sf) => {
            let mut dyn_res = 0.0f64;
            let mut cost_res = 0.0f64;
            let mut phi = vec![0.0; n];
            let mut mx = vec![0.0; n];
            for _ in 0..PAIRS / 2 {
                let s = sm.time();
                let x = sm.state();
                let a = sm.control();
                mat_vec(&(sf.m)(s), &x, &mut mx);
                (sf.phi)(s, &a, &mut phi);
                let f = spec.f(s, &x, &a);
                for i in 0..n {
                    dyn_res = dyn_res.max((f[i] - mx[i] - phi[i]).abs());
                }
                cost_res = cost_res.max((spec.stage(s, &x, &a) - (sf.lx)(s, &x) - (sf.la)(s, &a)).abs());
            }
            c2.push(ConditionItem::from_violation("dynamics split M(s) x + phi(s, a)", dyn_res, SPLIT_TOL));
            c2.push(ConditionItem::from_violation("stage cost split Lx + La", cost_res, SPLIT_TOL));
            let s = sm.time();
            let lx = midpoint_violation(PAIRS, || (sm.state(), sm.state()), |x| (sf.lx)(s, x));
            c2.push(ConditionItem::from_violation("stage cost Lx convex in x", lx, SPLIT_TOL));
        }
        None => {
            c2.push(ConditionItem::inconclusive("dynamics split M(s) x + phi(s, a)"));
            c2.push(ConditionItem::inconclusive("stage cost split Lx + La"));
        }
    }
    c2.push(g_item);
    c2.push(c_item);
    c2.push(joint_set_check(spec, &mut sm));

    ConvexityReport {
        condition1: CheckStatus::all(&c1),
        condition2: CheckStatus::all(&c2),
        condition1_items: c1,
        condition2_items: c2,
    }
}

/// Joint convexity of `{(x, b) : b ∈ Conv(B(s, x))}`: draw feasible pairs as
/// random convex combinations of generators and test that the midpoint pair
/// is still feasible.
fn joint_set_check(spec: &ProblemSpec, sm: &mut Sampler<'_>) -> ConditionItem {
    const NAME: &str = "joint set of (x, b) convex";
    let mut worst = 0.0f64;
    for _ in 0..JOINT_PAIRS {
        let s = sm.time();
        let draw = |sm: &mut Sampler<'_>| {
            let x = sm.state();
            let weights: Vec<f64> = (0..3).map(|_| sm.rng.gen_range(0.0..1.0)).collect();
            let total: f64 = weights.iter().sum::<f64>().max(1e-12);
            let mut b = vec![0.0; spec.state_dim];
            for w in weights {
                let a = sm.control();
                let f = spec.f(s, &x, &a);
                for (bi, fi) in b.iter_mut().zip(f) {
                    *bi -= w / total * fi;
                }
            }
            (x, b)
        };
        let (x, b) = draw(sm);
        let (y, c) = draw(sm);
        let xm = midpoint(&x, &y);
        let bm = midpoint(&b, &c);
        match hstar(spec, s, &xm, &bm) {
            Ok(v) if v.is_finite() => {}
            Ok(_) => {
                let set = super::conv_control_set(spec, s, &xm);
                let r = set.residual(&bm).unwrap_or(f64::INFINITY);
                worst = worst.max(r.max(2.0 * FEAS_TOL));
            }
            Err(_) => return ConditionItem::inconclusive(NAME),
        }
    }
    ConditionItem::from_violation(NAME, worst, FEAS_TOL)
}
