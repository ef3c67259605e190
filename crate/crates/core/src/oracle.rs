//! Independent references: a semi-Lagrangian grid solver for the HJB
//! equation in low dimension, and exhaustive enumeration of piecewise-constant
//! control sequences for tiny horizons.

use crate::discretize::TimeGrid;
use crate::error::OracleError;
use crate::exec::Exec;
use crate::linalg::norm;
use crate::problem::ProblemSpec;
use serde::Serialize;
use std::path::Path;

/// Largest state dimension the grid solver accepts.
pub const MAX_GRID_DIM: usize = 3;
/// Largest number of control sequences [`brute_force`] will enumerate.
pub const BRUTE_BUDGET: f64 = 1e7;
pub const MAX_BRUTE_STEPS: usize = 8;

/// Value function on a uniform box grid, one slice per time node.
#[derive(Clone, Debug, PartialEq)]
pub struct GridValueFunction {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Points per axis.
    pub resolution: Vec<usize>,
    pub times: Vec<f64>,
    /// `values[k][flat node index]`, first axis fastest. `+∞` marks masked
    /// nodes and nodes whose backups all leave the box.
    pub values: Vec<Vec<f64>>,
}

impl GridValueFunction {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn node_count(&self) -> usize {
        self.resolution.iter().product()
    }

    fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.resolution[axis] - 1) as f64
    }

    /// Coordinates of flat node `idx`.
    pub fn node(&self, mut idx: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|a| {
                let i = idx % self.resolution[a];
                idx /= self.resolution[a];
                self.lo[a] + i as f64 * self.spacing(a)
            })
            .collect()
    }

    /// Multilinear interpolation of slice `k`; `+∞` outside the box or when
    /// a corner with positive weight is `+∞`.
    pub fn interpolate(&self, k: usize, x: &[f64]) -> f64 {
        interpolate_slice(&self.lo, &self.hi, &self.resolution, &self.values[k], x)
    }

    /// Value at the first time node.
    pub fn value_at_start(&self, x: &[f64]) -> f64 {
        self.interpolate(0, x)
    }
}

fn interpolate_slice(lo: &[f64], hi: &[f64], res: &[usize], vals: &[f64], x: &[f64]) -> f64 {
    let d = lo.len();
    let mut base = [0usize; MAX_GRID_DIM];
    let mut frac = [0.0f64; MAX_GRID_DIM];
    let mut stride = [0usize; MAX_GRID_DIM];
    let mut s = 1;
    for a in 0..d {
        let h = (hi[a] - lo[a]) / (res[a] - 1) as f64;
        let pos = (x[a] - lo[a]) / h;
        let top = (res[a] - 1) as f64;
        if !(pos >= -1e-9 && pos <= top + 1e-9) {
            return f64::INFINITY;
        }
        let pos = pos.clamp(0.0, top);
        let i = (pos.floor() as usize).min(res[a] - 2);
        base[a] = i;
        frac[a] = pos - i as f64;
        stride[a] = s;
        s *= res[a];
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut idx = 0;
        for a in 0..d {
            let up = corner >> a & 1 == 1;
            w *= if up { frac[a] } else { 1.0 - frac[a] };
            idx += (base[a] + up as usize) * stride[a];
        }
        if w == 0.0 {
            continue;
        }
        let v = vals[idx];
        if v.is_infinite() {
            return f64::INFINITY;
        }
        acc += w * v;
    }
    acc
}

/// Backup sample: 64 points on a 1-D control, 16 per axis otherwise.
pub fn oracle_control_sample(spec: &ProblemSpec) -> Vec<Vec<f64>> {
    let per_axis = if spec.control_dim == 1 { 64 } else { 16 };
    spec.control_set.grid_sample(per_axis)
}

/// Semi-Lagrangian backward recursion
/// `V_k(x) = min_a L(t_k, x, a) Δ_k + V_{k+1}(x + f(t_k, x, a) Δ_k)`
/// from `V_K = g`, with `+∞` where `c(t_k, x) > 0`.
///
/// The box must contain the tube `‖x − x₀‖ ≤ C (T − t)` around the initial
/// state, with `C` the largest sampled speed at `x₀`.
pub fn hjb_grid_solve(
    spec: &ProblemSpec,
    lo: &[f64],
    hi: &[f64],
    resolution: usize,
    grid: &TimeGrid,
    exec: Exec,
) -> Result<GridValueFunction, OracleError> {
    let n = spec.state_dim;
    if n > MAX_GRID_DIM {
        return Err(OracleError::Dimension(n));
    }
    if lo.len() != n || hi.len() != n || lo.iter().zip(hi).any(|(l, h)| !(l < h)) || resolution < 2 {
        return Err(OracleError::Invalid("box must have n axes with lo < hi and resolution >= 2".into()));
    }
    let sample = oracle_control_sample(spec);
    let x0 = &spec.initial_state;
    let speed = sample
        .iter()
        .map(|a| norm(&spec.f(grid.start(), x0, a)))
        .fold(0.0, f64::max);
    let reach = speed * (grid.end() - grid.start());
    let tube_lo: Vec<f64> = x0.iter().map(|v| v - reach).collect();
    let tube_hi: Vec<f64> = x0.iter().map(|v| v + reach).collect();
    let margin = 1e-9;
    if (0..n).any(|i| tube_lo[i] < lo[i] - margin || tube_hi[i] > hi[i] + margin) {
        return Err(OracleError::BoxTooSmall { lo: tube_lo, hi: tube_hi });
    }
    let mut vf = GridValueFunction {
        lo: lo.to_vec(),
        hi: hi.to_vec(),
        resolution: vec![resolution; n],
        times: grid.nodes().to_vec(),
        values: Vec::with_capacity(grid.steps() + 1),
    };
    let nodes: Vec<Vec<f64>> = (0..vf.node_count()).map(|i| vf.node(i)).collect();
    let t = grid.nodes();
    let kk = grid.steps();
    let masked = |s: f64, x: &[f64]| spec.state_constraint.is_some() && spec.constraint(s, x) > 0.0;
    let mut next: Vec<f64> = nodes
        .iter()
        .map(|x| if masked(t[kk], x) { f64::INFINITY } else { spec.terminal(x) })
        .collect();
    let mut slices = vec![next.clone()];
    for k in (0..kk).rev() {
        let dt = grid.delta(k);
        let mut cur = vec![0.0; nodes.len()];
        exec.fill(&mut cur, |i| {
            let x = &nodes[i];
            if masked(t[k], x) {
                return f64::INFINITY;
            }
            let mut best = f64::INFINITY;
            let mut y = vec![0.0; n];
            for a in &sample {
                let f = spec.f(t[k], x, a);
                for j in 0..n {
                    y[j] = x[j] + dt * f[j];
                }
                let v = spec.stage(t[k], x, a) * dt + interpolate_slice(&vf.lo, &vf.hi, &vf.resolution, &next, &y);
                best = best.min(v);
            }
            best
        });
        next = cur;
        slices.push(next.clone());
    }
    slices.reverse();
    vf.values = slices;
    Ok(vf)
}

/// Writes slice `k` as `x_1..x_d, value` rows (`inf` for masked nodes).
pub fn write_value_csv(path: &Path, vf: &GridValueFunction, k: usize) -> Result<(), OracleError> {
    let io = |e: csv::Error| OracleError::Invalid(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header: Vec<String> = (1..=vf.dim()).map(|i| format!("x_{i}")).collect();
    header.push("value".into());
    w.write_record(&header).map_err(io)?;
    for (i, v) in vf.values[k].iter().enumerate() {
        let mut rec: Vec<String> = vf.node(i).iter().map(f64::to_string).collect();
        rec.push(v.to_string());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| OracleError::Invalid(e.to_string()))?;
    Ok(())
}

/// Best control sequence found by enumeration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BruteForceResult {
    pub cost: f64,
    pub sequence: Vec<Vec<f64>>,
    pub enumerated: u64,
}

/// Default enumeration sample: the finest per-axis grid whose sequences fit
/// the budget for `steps` steps.
pub fn brute_force_sample(spec: &ProblemSpec, steps: usize) -> Vec<Vec<f64>> {
    let fits = |len: usize| (len as f64).powi(steps as i32) <= BRUTE_BUDGET;
    let mut best = spec.control_set.grid_sample(1);
    for per_axis in 2..=64 {
        let next = spec.control_set.grid_sample(per_axis);
        if !fits(next.len()) {
            break;
        }
        best = next;
    }
    best
}

/// Enumerates every sequence of `sample` controls on `grid`, integrating by
/// forward Euler as in the transcription. Sequences with `c(t_k, x_k) > 0` at
/// some `k < K` are discarded. `+∞` cost when none survives.
pub fn brute_force(spec: &ProblemSpec, grid: &TimeGrid, sample: &[Vec<f64>], exec: Exec) -> Result<BruteForceResult, OracleError> {
    let kk = grid.steps();
    if kk > MAX_BRUTE_STEPS {
        return Err(OracleError::Invalid(format!("brute force needs K <= {MAX_BRUTE_STEPS}, got {kk}")));
    }
    let count = (sample.len() as f64).powi(kk as i32);
    if count > BRUTE_BUDGET {
        return Err(OracleError::Budget(count));
    }
    if sample.is_empty() {
        return Err(OracleError::Invalid("empty control sample".into()));
    }
    let x0 = spec.initial_state.clone();
    let per_first = exec.map(sample.len(), |first| {
        let mut best = BruteForceResult {
            cost: f64::INFINITY,
            sequence: Vec::new(),
            enumerated: 0,
        };
        let mut seq = vec![first];
        descend(spec, grid, sample, &x0, 0.0, &mut seq, &mut best);
        best
    });
    let mut total = 0;
    let mut best: Option<BruteForceResult> = None;
    for r in per_first {
        total += r.enumerated;
        if best.as_ref().is_none_or(|b| r.cost < b.cost) {
            best = Some(r);
        }
    }
    let mut best = best.expect("non-empty sample");
    best.enumerated = total;
    Ok(best)
}

fn descend(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    sample: &[Vec<f64>],
    x: &[f64],
    running: f64,
    seq: &mut Vec<usize>,
    best: &mut BruteForceResult,
) {
    let k = seq.len() - 1;
    let t = grid.nodes()[k];
    if spec.state_constraint.is_some() && spec.constraint(t, x) > 0.0 {
        return;
    }
    let a = &sample[seq[k]];
    let dt = grid.delta(k);
    let cost = running + spec.stage(t, x, a) * dt;
    let next: Vec<f64> = x.iter().zip(spec.f(t, x, a)).map(|(xi, fi)| xi + dt * fi).collect();
    if k + 1 == grid.steps() {
        best.enumerated += 1;
        let total = cost + spec.terminal(&next);
        if total < best.cost {
            best.cost = total;
            best.sequence = seq.iter().map(|&i| sample[i].clone()).collect();
        }
        return;
    }
    for j in 0..sample.len() {
        seq.push(j);
        descend(spec, grid, sample, &next, cost, seq, best);
        seq.pop();
    }
}

/// `g(x₀)` for an empty horizon.
pub fn brute_force_empty(spec: &ProblemSpec) -> BruteForceResult {
    BruteForceResult {
        cost: spec.terminal(&spec.initial_state),
        sequence: Vec::new(),
        enumerated: 1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub lax: f64,
    pub oracle: f64,
    pub gap: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Passes when `|lax − oracle| ≤ tolerance`.
pub fn compare(lax: f64, oracle: f64, tolerance: f64) -> Comparison {
    let gap = (lax - oracle).abs();
    Comparison {
        lax,
        oracle,
        gap,
        tolerance,
        pass: gap <= tolerance,
    }
}

/// Relaxation ordering: the convexified value may not exceed a restricted
/// enumeration by more than `tolerance`.
pub fn relaxation_holds(lax: f64, restricted: f64, tolerance: f64) -> bool {
    lax <= restricted + tolerance
}
