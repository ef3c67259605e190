//! Splitting a relaxed velocity into admissible controls, and the switch
//! schedule that realizes the split inside each time step.
//!
//! A velocity `b ∈ Conv(B(s, x))` is written as `Σ γ_i b_i` with
//! `b_i = −f(s, x, a_i)`, `γ` in the simplex and `Σ γ_i L(s, x, a_i) = H*(s, x, b)`.
//! Within step `k` the control `a_i` is then held for `γ_i Δ_k`.

use crate::discretize::TimeGrid;
use crate::error::{DecomposeError, TransformError};
use crate::exec::Exec;
use crate::linalg::{dist, norm, KahanSum};
use crate::problem::{Builtin, FormationParams, GearParams, ProblemSpec};
use crate::transform::{self, FEAS_TOL};
use serde::{Deserialize, Serialize};

/// Weights below this are dropped and the rest renormalized.
pub const PRUNE_WEIGHT: f64 = 1e-10;

/// Slack allowed when snapping a velocity onto `B(s, x)`.
const SNAP_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecomposeMode {
    /// Per built-in geometry; falls back to `Lp` for user problems.
    #[default]
    ClosedForm,
    /// Convexification LP over the generator sample.
    Lp,
}

/// One admissible control with its velocity `−f(s, x, a)` and weight.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControlAtom {
    pub control: Vec<f64>,
    pub velocity: Vec<f64>,
    pub weight: f64,
}

/// Atoms for every step of a relaxed trajectory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControlDecomposition {
    pub steps: Vec<Vec<ControlAtom>>,
}

impl ControlDecomposition {
    pub fn max_atoms(&self) -> usize {
        self.steps.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Worst violation of each decomposition invariant over all steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct InvariantReport {
    /// `max(−min γ, |Σγ − 1|)`.
    pub weights: f64,
    /// `‖Σ γ_i b_i − β‖`.
    pub reconstruction: f64,
    /// `‖b_i + f(s, x, a_i)‖`.
    pub dynamics: f64,
    /// `|Σ γ_i L(s, x, a_i) − H*(s, x, β)|`.
    pub cost: f64,
}

impl InvariantReport {
    /// Thresholds: weights and reconstruction 1e-8, dynamics and cost 1e-6.
    pub fn holds(&self) -> bool {
        self.weights <= 1e-12 && self.reconstruction <= 1e-8 && self.dynamics <= 1e-6 && self.cost <= 1e-6
    }

    fn merge(self, o: Self) -> Self {
        Self {
            weights: self.weights.max(o.weights),
            reconstruction: self.reconstruction.max(o.reconstruction),
            dynamics: self.dynamics.max(o.dynamics),
            cost: self.cost.max(o.cost),
        }
    }
}

/// Decomposes `b` at `(s, x)`.
///
/// Atoms come out by descending weight. When the set splits into independent
/// blocks (the formation agents) the joint atoms follow the common refinement
/// instead, so each block on its own sees its atoms by descending weight and
/// switches at most once per step per atom.
pub fn decompose_control(
    spec: &ProblemSpec,
    s: f64,
    x: &[f64],
    b: &[f64],
    mode: DecomposeMode,
) -> Result<Vec<ControlAtom>, DecomposeError> {
    let parts = match (mode, &spec.builtin) {
        (DecomposeMode::ClosedForm, Some(Builtin::Vehicle2d)) => vehicle(b)?,
        (DecomposeMode::ClosedForm, Some(Builtin::Gear4d(p))) => gear(p, b)?,
        (DecomposeMode::ClosedForm, Some(Builtin::Formation12d(p))) => formation(p, b)?,
        _ => lp(spec, s, x, b)?,
    };
    let mut atoms: Vec<ControlAtom> = parts
        .into_iter()
        .filter(|(_, w)| *w >= PRUNE_WEIGHT)
        .map(|(control, weight)| {
            let velocity = spec.f(s, x, &control).into_iter().map(|v| -v).collect();
            ControlAtom {
                control,
                velocity,
                weight,
            }
        })
        .collect();
    if atoms.is_empty() {
        return Err(DecomposeError::Infeasible(f64::NAN));
    }
    let total: f64 = atoms.iter().map(|a| a.weight).sum();
    for a in &mut atoms {
        a.weight /= total;
    }
    if atoms.len() > spec.state_dim + 1 {
        return Err(DecomposeError::TooManyAtoms(atoms.len(), spec.state_dim + 1));
    }
    Ok(atoms)
}

type Parts = Vec<(Vec<f64>, f64)>;

fn vehicle(b: &[f64]) -> Result<Parts, DecomposeError> {
    let r = norm(b);
    if r > 1.0 + FEAS_TOL {
        return Err(DecomposeError::Infeasible(r - 1.0));
    }
    let heading = |v: [f64; 2]| vec![(-v[1]).atan2(-v[0])];
    if r >= 1.0 - SNAP_TOL {
        return Ok(vec![(heading([b[0], b[1]]), 1.0)]);
    }
    let dir = if r > 0.0 { [b[0] / r, b[1] / r] } else { [1.0, 0.0] };
    Ok(vec![
        (heading(dir), 0.5 * (1.0 + r)),
        (heading([-dir[0], -dir[1]]), 0.5 * (1.0 - r)),
    ])
}

fn solve2(c0: [f64; 2], c1: [f64; 2], rhs: [f64; 2]) -> [f64; 2] {
    let det = c0[0] * c1[1] - c1[0] * c0[1];
    [
        (rhs[0] * c1[1] - c1[0] * rhs[1]) / det,
        (c0[0] * rhs[1] - rhs[0] * c0[1]) / det,
    ]
}

/// Gear: the velocity plane is the triangle `O, P1, P2` where `P_g` is full
/// torque in gear `g`. Points on a gear ray need one atom; otherwise the line
/// from `P1` through `b` meets the gear-2 ray.
fn gear(p: &GearParams, b: &[f64]) -> Result<Parts, DecomposeError> {
    let (p1, p2) = transform::analytic::gear_vertices(p);
    let [l1, l2] = solve2(p1, p2, [b[1], b[3]]);
    let miss = (-l1).max(-l2).max(l1 + l2 - 1.0);
    if miss > FEAS_TOL {
        return Err(DecomposeError::Infeasible(miss));
    }
    let l1 = l1.clamp(0.0, 1.0);
    let l2 = l2.clamp(0.0, 1.0 - l1);
    if l2 <= SNAP_TOL {
        return Ok(vec![(vec![1.0, l1], 1.0)]);
    }
    if l1 <= SNAP_TOL {
        return Ok(vec![(vec![2.0, l2], 1.0)]);
    }
    let torque = (l2 / (1.0 - l1)).min(1.0);
    let mut parts = vec![(vec![1.0, 1.0], l1), (vec![2.0, torque], 1.0 - l1)];
    parts.sort_by(|p, q| q.1.total_cmp(&p.1));
    Ok(parts)
}

/// Control `(a, θ)` with `−(a cos θ, a sin θ) = v`, if it is admissible.
fn formation_control(p: &FormationParams, v: [f64; 2]) -> Option<[f64; 2]> {
    let r = v[0].hypot(v[1]);
    if r <= SNAP_TOL {
        return Some([0.0, 0.0]);
    }
    let (mag, ang) = if v[0] < 0.0 {
        (r, (-v[1]).atan2(-v[0]))
    } else {
        (-r, v[1].atan2(v[0]))
    };
    if ang.abs() > p.max_angle + SNAP_TOL || mag > p.accel_max + SNAP_TOL || mag < p.accel_min - SNAP_TOL {
        return None;
    }
    Some([
        mag.clamp(p.accel_min, p.accel_max),
        ang.clamp(-p.max_angle, p.max_angle),
    ])
}

/// One agent: inside a sector it is a single control. Between the sectors
/// (the triangle spanned by the origin, a thrust corner and a braking corner)
/// the line from the thrust corner through `v` meets the braking edge.
fn formation_agent(p: &FormationParams, v: [f64; 2]) -> Result<Vec<([f64; 2], f64)>, DecomposeError> {
    if let Some(a) = formation_control(p, v) {
        return Ok(vec![(a, 1.0)]);
    }
    let side = if v[1] >= 0.0 { 1.0 } else { -1.0 };
    let (sn, cs) = p.max_angle.sin_cos();
    let corner = [-p.accel_max * cs, side * p.accel_max * sn];
    let edge = [cs, side * sn];
    let [g, m] = solve2(corner, edge, v);
    let reach = -p.accel_min;
    let len = if g < 1.0 { m / (1.0 - g) } else { 0.0 };
    let miss = (-g).max(g - 1.0).max(-m).max(len - reach);
    if miss > FEAS_TOL {
        return Err(DecomposeError::Infeasible(miss));
    }
    let g = g.clamp(0.0, 1.0);
    Ok(vec![
        ([p.accel_max, -side * p.max_angle], g),
        ([-len.clamp(0.0, reach), side * p.max_angle], 1.0 - g),
    ])
}

fn formation(p: &FormationParams, b: &[f64]) -> Result<Parts, DecomposeError> {
    let per_agent = (0..3)
        .map(|l| {
            formation_agent(p, [b[4 * l + 1], b[4 * l + 3]])
                .map(|atoms| atoms.into_iter().map(|(a, w)| (a.to_vec(), w)).collect())
        })
        .collect::<Result<Vec<Parts>, _>>()?;
    Ok(refine(&per_agent))
}

/// Common refinement of per-block convex combinations: lay each block's
/// weights end to end on `[0, 1]`, cut at every block's breakpoints and
/// concatenate the block controls active on each cut.
fn refine(blocks: &[Parts]) -> Parts {
    let mut blocks: Vec<Parts> = blocks.to_vec();
    for blk in &mut blocks {
        blk.sort_by(|p, q| q.1.total_cmp(&p.1));
    }
    let ends: Vec<Vec<f64>> = blocks
        .iter()
        .map(|blk| {
            let mut acc = KahanSum::new(0.0);
            let total: f64 = blk.iter().map(|a| a.1).sum();
            blk.iter()
                .map(|a| {
                    acc.add(a.1 / total);
                    acc.value()
                })
                .collect()
        })
        .collect();
    let mut cuts: Vec<f64> = ends.iter().flat_map(|e| e[..e.len() - 1].iter().copied()).collect();
    cuts.push(0.0);
    cuts.push(1.0);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut out = Vec::with_capacity(cuts.len() - 1);
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let control = blocks
            .iter()
            .zip(&ends)
            .flat_map(|(blk, e)| {
                let i = e.iter().position(|&c| mid < c).unwrap_or(e.len() - 1);
                blk[i].0.clone()
            })
            .collect();
        out.push((control, w[1] - w[0]));
    }
    out
}

/// Active atoms of the convexification LP, one refinement across blocks.
fn lp(spec: &ProblemSpec, s: f64, x: &[f64], b: &[f64]) -> Result<Parts, DecomposeError> {
    let gens = transform::generator_sample(spec, s, x);
    if gens.is_empty() {
        return Err(TransformError::EmptySample.into());
    }
    let combos = gens.min_cost(b, FEAS_TOL)?.ok_or_else(|| {
        let miss = transform::membership_residual(spec, s, x, b).unwrap_or(f64::NAN);
        DecomposeError::Infeasible(miss)
    })?;
    let blocks: Vec<Parts> = gens
        .blocks
        .iter()
        .zip(&combos)
        .map(|(blk, c)| {
            c.support
                .iter()
                .zip(&c.weights)
                .map(|(&j, &w)| (blk.controls[j].clone(), w))
                .collect()
        })
        .collect();
    let mut parts = refine(&blocks);
    // Blocks may cover only some control coordinates; place them.
    let layout: Vec<usize> = gens.blocks.iter().flat_map(|blk| blk.control_coords.iter().copied()).collect();
    if layout.len() != spec.control_dim || layout.iter().enumerate().any(|(i, &c)| i != c) {
        let fill = spec.control_sample()[0].clone();
        for (control, _) in &mut parts {
            let mut full = fill.clone();
            for (v, &c) in control.iter().zip(&layout) {
                full[c] = *v;
            }
            *control = full;
        }
    }
    Ok(parts)
}

/// Decomposes every step `β[k]` at `(t_k, x[k])`.
pub fn decompose_trajectory(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    x_star: &[Vec<f64>],
    beta_star: &[Vec<f64>],
    mode: DecomposeMode,
    exec: Exec,
) -> Result<ControlDecomposition, DecomposeError> {
    let t = grid.nodes();
    let steps = exec.map(beta_star.len(), |k| decompose_control(spec, t[k], &x_star[k], &beta_star[k], mode));
    Ok(ControlDecomposition {
        steps: steps.into_iter().collect::<Result<_, _>>()?,
    })
}

/// Checks the four decomposition invariants at one step.
pub fn check_step(spec: &ProblemSpec, s: f64, x: &[f64], b: &[f64], atoms: &[ControlAtom]) -> InvariantReport {
    let total: f64 = atoms.iter().map(|a| a.weight).sum();
    let min = atoms.iter().map(|a| a.weight).fold(f64::INFINITY, f64::min);
    let mut recon = vec![0.0; b.len()];
    let mut dynamics: f64 = 0.0;
    let mut cost = KahanSum::new(0.0);
    for a in atoms {
        for (r, v) in recon.iter_mut().zip(&a.velocity) {
            *r += a.weight * v;
        }
        let f = spec.f(s, x, &a.control);
        let miss = a.velocity.iter().zip(&f).map(|(v, fi)| (v + fi) * (v + fi)).sum::<f64>().sqrt();
        dynamics = dynamics.max(miss);
        cost.add(a.weight * spec.stage(s, x, &a.control));
    }
    let hstar = transform::hstar(spec, s, x, b).map_or(f64::INFINITY, |h| h.to_f64());
    InvariantReport {
        weights: (-min).max((total - 1.0).abs()),
        reconstruction: dist(&recon, b),
        dynamics,
        cost: (cost.value() - hstar).abs(),
    }
}

/// Worst invariant violations over a whole decomposition.
pub fn check_invariants(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    x_star: &[Vec<f64>],
    beta_star: &[Vec<f64>],
    decomp: &ControlDecomposition,
    exec: Exec,
) -> InvariantReport {
    let t = grid.nodes();
    exec.map(decomp.steps.len(), |k| check_step(spec, t[k], &x_star[k], &beta_star[k], &decomp.steps[k]))
        .into_iter()
        .fold(InvariantReport::default(), InvariantReport::merge)
}

/// Piecewise-constant control assignment on a grid refined at the switches.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Schedule {
    /// Refined breakpoints; every original node appears.
    pub times: Vec<f64>,
    /// Control on `[times[i], times[i+1])`.
    pub controls: Vec<Vec<f64>>,
    /// Original step of each piece.
    pub step: Vec<usize>,
}

impl Schedule {
    pub fn pieces(&self) -> usize {
        self.controls.len()
    }
}

/// Holds atom `i` of step `k` on `[t_k + Σ_{j<i} γ_j Δ_k, t_k + Σ_{j≤i} γ_j Δ_k)`,
/// atoms in stored order. The last piece of a step ends exactly at `t_{k+1}`.
pub fn switch_schedule(grid: &TimeGrid, decomp: &ControlDecomposition) -> Schedule {
    let t = grid.nodes();
    let mut out = Schedule {
        times: vec![t[0]],
        controls: Vec::new(),
        step: Vec::new(),
    };
    for (k, atoms) in decomp.steps.iter().enumerate() {
        let dt = grid.delta(k);
        let mut acc = KahanSum::new(0.0);
        let kept: Vec<&ControlAtom> = atoms.iter().filter(|a| a.weight > 0.0).collect();
        for (i, a) in kept.iter().enumerate() {
            acc.add(a.weight);
            let end = if i + 1 == kept.len() {
                t[k + 1]
            } else {
                t[k] + acc.value() * dt
            };
            out.times.push(end);
            out.controls.push(a.control.clone());
            out.step.push(k);
        }
    }
    out
}
