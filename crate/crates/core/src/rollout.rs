//! Admissible control signal, integration of the true dynamics and the gaps
//! to the relaxed trajectory.

use crate::decompose::{ControlDecomposition, Schedule};
use crate::discretize::TimeGrid;
use crate::error::RolloutError;
use crate::linalg::{dist, norm, KahanSum};
use crate::problem::ProblemSpec;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Default RK4 substeps per control piece.
pub const DEFAULT_SUBSTEPS: usize = 10;

/// Piecewise-constant control: `values[i]` on `[breakpoints[i], breakpoints[i+1])`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PiecewiseControl {
    pub breakpoints: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl PiecewiseControl {
    pub fn new(breakpoints: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self, RolloutError> {
        if breakpoints.is_empty()
            || breakpoints.len() != values.len() + 1
            || breakpoints.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(RolloutError::BadBreakpoints);
        }
        Ok(Self { breakpoints, values })
    }

    pub fn pieces(&self) -> usize {
        self.values.len()
    }

    pub fn start(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn end(&self) -> f64 {
        self.breakpoints[self.breakpoints.len() - 1]
    }

    /// Number of breakpoints where the value changes.
    pub fn switches(&self) -> usize {
        self.values.windows(2).filter(|w| w[0] != w[1]).count()
    }

    /// Value in force at `t` (right-continuous; the last piece also covers
    /// its end point).
    pub fn value_at(&self, t: f64) -> Option<&[f64]> {
        if self.values.is_empty() || t < self.start() || t > self.end() {
            return None;
        }
        let i = self.breakpoints.partition_point(|&b| b <= t).saturating_sub(1);
        Some(&self.values[i.min(self.values.len() - 1)])
    }

    /// Largest violation of `A`-membership over the pieces, as the smallest
    /// tolerance at which every value passes.
    pub fn membership_violation(&self, spec: &ProblemSpec) -> f64 {
        let ok = |tol: f64| self.values.iter().all(|v| spec.control_set.contains(v, tol));
        if ok(0.0) {
            return 0.0;
        }
        [1e-15, 1e-12, 1e-9, 1e-6, 1e-3]
            .into_iter()
            .find(|&t| ok(t))
            .unwrap_or(f64::INFINITY)
    }
}

/// `α^ε` from a switch schedule: one piece per scheduled subinterval.
pub fn synthesize_alpha(schedule: &Schedule) -> PiecewiseControl {
    PiecewiseControl {
        breakpoints: schedule.times.clone(),
        values: schedule.controls.clone(),
    }
}

/// States on the fine grid and the realized cost.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RolloutResult {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Index of the control piece for each fine interval.
    pub piece: Vec<usize>,
    pub cost: f64,
    pub switch_count: usize,
}

impl RolloutResult {
    pub fn final_state(&self) -> &[f64] {
        &self.states[self.states.len() - 1]
    }
}

fn rk4_step(spec: &ProblemSpec, s: f64, x: &[f64], a: &[f64], h: f64) -> Vec<f64> {
    let k1 = spec.f(s, x, a);
    let shifted = |k: &[f64], c: f64| -> Vec<f64> { x.iter().zip(k).map(|(xi, ki)| xi + c * ki).collect() };
    let k2 = spec.f(s + 0.5 * h, &shifted(&k1, 0.5 * h), a);
    let k3 = spec.f(s + 0.5 * h, &shifted(&k2, 0.5 * h), a);
    let k4 = spec.f(s + h, &shifted(&k3, h), a);
    (0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Fixed-step RK4 with `substeps` equal steps inside every control piece, so
/// no step straddles a switch. The cost is the left Riemann sum of `L` on the
/// fine grid plus `g` at the end.
pub fn integrate(spec: &ProblemSpec, ctrl: &PiecewiseControl, x0: &[f64], substeps: usize) -> Result<RolloutResult, RolloutError> {
    if substeps == 0 {
        return Err(RolloutError::NoSubsteps);
    }
    let n_fine = ctrl.pieces() * substeps;
    let mut times = Vec::with_capacity(n_fine + 1);
    let mut states = Vec::with_capacity(n_fine + 1);
    let mut piece = Vec::with_capacity(n_fine);
    let mut cost = KahanSum::new(0.0);
    times.push(ctrl.start());
    states.push(x0.to_vec());
    for (i, a) in ctrl.values.iter().enumerate() {
        let (lo, hi) = (ctrl.breakpoints[i], ctrl.breakpoints[i + 1]);
        let h = (hi - lo) / substeps as f64;
        for j in 0..substeps {
            let s = times[times.len() - 1];
            let x = &states[states.len() - 1];
            let next_t = if j + 1 == substeps { hi } else { lo + (j + 1) as f64 * h };
            let step = next_t - s;
            cost.add(spec.stage(s, x, a) * step);
            let next = rk4_step(spec, s, x, a, step);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(RolloutError::NonFinite(s));
            }
            times.push(next_t);
            states.push(next);
            piece.push(i);
        }
    }
    cost.add(spec.terminal(&states[states.len() - 1]));
    Ok(RolloutResult {
        times,
        states,
        piece,
        cost: cost.value(),
        switch_count: ctrl.switches(),
    })
}

/// Linear interpolation of node values at `t`, clamped to the grid.
pub fn interpolate(grid: &TimeGrid, nodes: &[Vec<f64>], t: f64) -> Vec<f64> {
    let ts = grid.nodes();
    let k = ts.partition_point(|&v| v <= t).clamp(1, ts.len() - 1) - 1;
    let w = ((t - ts[k]) / (ts[k + 1] - ts[k])).clamp(0.0, 1.0);
    nodes[k].iter().zip(&nodes[k + 1]).map(|(a, b)| a + w * (b - a)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Gaps {
    /// `max ‖x_interp(s) − x^ε(s)‖₂` over the fine grid.
    pub sup_gap: f64,
    /// `|relaxed objective − realized cost|`.
    pub cost_gap: f64,
}

/// Gaps between the relaxed trajectory (linear between nodes) and a rollout.
pub fn gaps(x_star: &[Vec<f64>], objective: f64, rollout: &RolloutResult, grid: &TimeGrid) -> Gaps {
    let sup_gap = rollout
        .times
        .iter()
        .zip(&rollout.states)
        .map(|(&t, x)| dist(&interpolate(grid, x_star, t), x))
        .fold(0.0, f64::max);
    Gaps {
        sup_gap,
        cost_gap: (objective - rollout.cost).abs(),
    }
}

/// Growth check `‖x^ε(s) − x₀‖ ≤ Ĉ (s − t)` with `Ĉ = 1.1 · max ‖f‖`, the
/// maximum over visited states and the control sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GrowthCheck {
    pub constant: f64,
    /// `max ‖x^ε(s) − x₀‖ / (Ĉ (s − t))`; at most 1 when the bound holds.
    pub worst_ratio: f64,
}

pub fn growth_check(spec: &ProblemSpec, rollout: &RolloutResult) -> GrowthCheck {
    let sample = spec.control_sample();
    let speed = rollout
        .times
        .iter()
        .zip(&rollout.states)
        .flat_map(|(&s, x)| sample.iter().map(move |a| norm(&spec.f(s, x, a))))
        .fold(0.0, f64::max);
    let constant = 1.1 * speed;
    let (t0, x0) = (rollout.times[0], &rollout.states[0]);
    let worst_ratio = rollout
        .times
        .iter()
        .zip(&rollout.states)
        .skip(1)
        .map(|(&s, x)| dist(x, x0) / (constant * (s - t0)))
        .filter(|r| r.is_finite())
        .fold(0.0, f64::max);
    GrowthCheck { constant, worst_ratio }
}

/// Heuristics that hold one control per step. Neither is certified.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MitigationMode {
    /// The heaviest atom of each step.
    MaxLikelihood,
    /// The control whose Euler step best tracks the next relaxed node,
    /// propagating the realized state.
    MinResidual,
}

impl std::str::FromStr for MitigationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max_likelihood" => Ok(Self::MaxLikelihood),
            "min_residual" => Ok(Self::MinResidual),
            _ => Err(format!("unknown mitigation mode `{s}` (max_likelihood, min_residual)")),
        }
    }
}

/// One control per step chosen by `mode`.
///
/// `MinResidual` searches the control sample together with the step's atoms
/// and needs a stage cost that does not depend on the control.
pub fn mitigate_switching(
    decomp: &ControlDecomposition,
    x_star: &[Vec<f64>],
    spec: &ProblemSpec,
    grid: &TimeGrid,
    mode: MitigationMode,
) -> Result<PiecewiseControl, RolloutError> {
    let t = grid.nodes();
    let values = match mode {
        MitigationMode::MaxLikelihood => decomp
            .steps
            .iter()
            .map(|atoms| {
                let mut best = &atoms[0];
                for a in &atoms[1..] {
                    if a.weight > best.weight {
                        best = a;
                    }
                }
                best.control.clone()
            })
            .collect(),
        MitigationMode::MinResidual => {
            if !spec.stage_cost_control_independent() {
                return Err(RolloutError::ControlDependentCost);
            }
            let sample = spec.control_sample();
            let mut xe = spec.initial_state.clone();
            let mut out = Vec::with_capacity(decomp.steps.len());
            for (k, atoms) in decomp.steps.iter().enumerate() {
                let dt = grid.delta(k);
                let target = &x_star[k + 1];
                let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
                for a in atoms.iter().map(|a| &a.control).chain(sample.iter()) {
                    let next: Vec<f64> = xe.iter().zip(spec.f(t[k], &xe, a)).map(|(x, f)| x + dt * f).collect();
                    let miss = dist(&next, target);
                    if best.as_ref().is_none_or(|b| miss < b.0) {
                        best = Some((miss, a.clone(), next));
                    }
                }
                let (_, a, next) = best.expect("non-empty candidate set");
                out.push(a);
                xe = next;
            }
            out
        }
    };
    PiecewiseControl::new(t.to_vec(), values)
}

/// Writes `time, <prefix>_1..<prefix>_d` rows.
pub fn write_series_csv(path: &Path, prefix: &str, times: &[f64], rows: &[Vec<f64>]) -> Result<(), RolloutError> {
    let mut w = csv::Writer::from_path(path)?;
    let d = rows.first().map_or(0, Vec::len);
    let mut header = vec!["time".to_string()];
    header.extend((1..=d).map(|i| format!("{prefix}_{i}")));
    w.write_record(&header)?;
    for (t, row) in times.iter().zip(rows) {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Control CSV: each piece contributes its left and right end, so switch
/// times appear twice (left value, then right value).
pub fn write_control_csv(path: &Path, ctrl: &PiecewiseControl) -> Result<(), RolloutError> {
    let mut times = Vec::with_capacity(2 * ctrl.pieces());
    let mut rows = Vec::with_capacity(2 * ctrl.pieces());
    for (i, v) in ctrl.values.iter().enumerate() {
        times.push(ctrl.breakpoints[i]);
        rows.push(v.clone());
        times.push(ctrl.breakpoints[i + 1]);
        rows.push(v.clone());
    }
    write_series_csv(path, "a", &times, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::ControlAtom;
    use crate::discretize::make_grid;
    use crate::problem::make_builtin;
    use serde_json::Map;

    fn spec(name: &str) -> ProblemSpec {
        make_builtin(name, &Map::new()).unwrap()
    }

    #[test]
    fn constant_heading_exact() {
        let sp = spec("vehicle2d");
        let h = 0.5f64.atan();
        let ctrl = PiecewiseControl::new(vec![0.0, 1.0], vec![vec![h]]).unwrap();
        let r = integrate(&sp, &ctrl, &[-1.0, -0.5], 1000).unwrap();
        let want = [-1.0 + 2.0 / 5f64.sqrt(), -0.5 + 1.0 / 5f64.sqrt()];
        assert!(dist(r.final_state(), &want) < 1e-9);
        assert_eq!(r.times.len(), 1001);
        assert!((r.cost - (1.25f64.sqrt() - 1.0)).abs() < 1e-9);
    }

    #[test]
    fn zero_horizon_keeps_start() {
        let sp = spec("vehicle2d");
        let ctrl = PiecewiseControl::new(vec![0.0], vec![]).unwrap();
        let r = integrate(&sp, &ctrl, &[3.0, 4.0], 10).unwrap();
        assert_eq!(r.states, vec![vec![3.0, 4.0]]);
        assert_eq!(r.cost, 5.0);
    }

    #[test]
    fn gear_rest_is_equilibrium() {
        let sp = spec("gear4d");
        let ctrl = PiecewiseControl::new(vec![0.0, 0.5, 1.0], vec![vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let r = integrate(&sp, &ctrl, &[0.0; 4], 10).unwrap();
        assert!(r.states.iter().all(|x| x.iter().all(|v| *v == 0.0)));
        assert_eq!(r.cost, 0.0);
        assert_eq!(r.switch_count, 1);
    }

    #[test]
    fn pieces_are_switch_aligned() {
        let sp = spec("vehicle2d");
        let ctrl = PiecewiseControl::new(vec![0.0, 0.3, 1.0], vec![vec![0.0], vec![1.0]]).unwrap();
        let r = integrate(&sp, &ctrl, &[0.0, 0.0], 3).unwrap();
        assert_eq!(r.times[3], 0.3);
        assert_eq!(r.piece, vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(ctrl.value_at(0.3), Some(&[1.0][..]));
        assert_eq!(ctrl.value_at(1.0), Some(&[1.0][..]));
    }

    #[test]
    fn bad_breakpoints_rejected() {
        assert!(PiecewiseControl::new(vec![0.0, 0.0], vec![vec![1.0]]).is_err());
        assert!(PiecewiseControl::new(vec![0.0, 1.0], vec![]).is_err());
        let sp = spec("vehicle2d");
        let ctrl = PiecewiseControl::new(vec![0.0, 1.0], vec![vec![0.0]]).unwrap();
        assert!(matches!(integrate(&sp, &ctrl, &[0.0, 0.0], 0), Err(RolloutError::NoSubsteps)));
    }

    #[test]
    fn exact_trajectory_has_no_gap() {
        let sp = spec("vehicle2d");
        let grid = make_grid(0.0, 1.0, 4).unwrap();
        let h = 0.3f64;
        let x_star: Vec<Vec<f64>> = grid.nodes().iter().map(|t| vec![t * h.cos(), t * h.sin()]).collect();
        let ctrl = PiecewiseControl::new(grid.nodes().to_vec(), vec![vec![h]; 4]).unwrap();
        let r = integrate(&sp, &ctrl, &[0.0, 0.0], 5).unwrap();
        let g = gaps(&x_star, 1.0, &r, &grid);
        assert!(g.sup_gap <= 1e-12);
        assert!(g.cost_gap < 1e-12);
        assert!(growth_check(&sp, &r).worst_ratio <= 1.0);
    }

    fn atom(c: f64, w: f64) -> ControlAtom {
        ControlAtom {
            control: vec![c],
            velocity: vec![],
            weight: w,
        }
    }

    #[test]
    fn max_likelihood_picks_heaviest() {
        let sp = spec("vehicle2d");
        let grid = make_grid(0.0, 1.0, 2).unwrap();
        let d = ControlDecomposition {
            steps: vec![vec![atom(0.1, 0.25), atom(0.2, 0.75)], vec![atom(0.3, 1.0)]],
        };
        let x_star = vec![vec![0.0; 2]; 3];
        let c = mitigate_switching(&d, &x_star, &sp, &grid, MitigationMode::MaxLikelihood).unwrap();
        assert_eq!(c.values, vec![vec![0.2], vec![0.3]]);
    }

    #[test]
    fn min_residual_follows_relaxed_nodes() {
        let sp = spec("vehicle2d");
        let grid = make_grid(0.0, 1.0, 2).unwrap();
        let d = ControlDecomposition {
            steps: vec![vec![atom(0.0, 1.0)], vec![atom(3.0, 1.0)]],
        };
        let x_star = vec![vec![-1.0, -0.5], vec![-0.5, -0.5], vec![-0.5, 0.0]];
        let c = mitigate_switching(&d, &x_star, &sp, &grid, MitigationMode::MinResidual).unwrap();
        assert_eq!(c.values[0], vec![0.0]);
        assert!((c.values[1][0] - std::f64::consts::FRAC_PI_2).abs() < 1e-3);

        let gear = spec("gear4d");
        assert!(matches!(
            mitigate_switching(&d, &x_star, &gear, &grid, MitigationMode::MinResidual),
            Err(RolloutError::ControlDependentCost)
        ));
    }

    #[test]
    fn control_csv_duplicates_switches() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("control.csv");
        let ctrl = PiecewiseControl::new(vec![0.0, 0.5, 1.0], vec![vec![1.0], vec![2.0]]).unwrap();
        write_control_csv(&path, &ctrl).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines, vec!["time,a_1", "0,1", "0.5,1", "0.5,2", "1,2"]);
    }
}
