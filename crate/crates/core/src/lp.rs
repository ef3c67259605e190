//! Convex-combination linear program over a finite point set.
//!
//! Solves
//!
//! ```text
//! minimize   Σ_j γ_j c_j
//! subject to Σ_j γ_j p_j = target,  Σ_j γ_j = 1,  γ ≥ 0
//! ```
//!
//! with a dense two-phase simplex. The optimal basis has at most `d + 1`
//! positive weights, which is the Carathéodory bound the decomposition relies
//! on. The same routine computes the convexified conjugate (its optimal value)
//! and the decomposition (its support).

use crate::error::LpError;
use nalgebra::{DMatrix, DVector};

const PIVOT_EPS: f64 = 1e-11;
const COST_EPS: f64 = 1e-12;

/// Optimal convex combination.
#[derive(Clone, Debug, PartialEq)]
pub struct Combination {
    /// Indices into the point list, one per positive weight.
    pub support: Vec<usize>,
    pub weights: Vec<f64>,
    pub cost: f64,
    /// `‖Σ γ_j p_j − target‖_∞` of the returned weights.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum HullLp {
    Optimal(Combination),
    /// Target is farther than the tolerance from the hull; `gap` is the
    /// phase-one optimum (an ℓ1 distance surrogate).
    Infeasible { gap: f64 },
}

impl HullLp {
    pub fn optimal(&self) -> Option<&Combination> {
        match self {
            HullLp::Optimal(c) => Some(c),
            HullLp::Infeasible { .. } => None,
        }
    }
}

struct Tableau {
    rows: usize,
    cols: usize,
    real: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn new(points: &[Vec<f64>], target: &[f64]) -> Self {
        let d = target.len();
        let real = points.len();
        let rows = d + 1;
        let cols = real + rows + 1;
        let mut data = vec![0.0; rows * cols];
        for i in 0..rows {
            let rhs = if i < d { target[i] } else { 1.0 };
            let sign = if rhs < 0.0 { -1.0 } else { 1.0 };
            let row = &mut data[i * cols..(i + 1) * cols];
            for (j, p) in points.iter().enumerate() {
                row[j] = sign * if i < d { p[i] } else { 1.0 };
            }
            row[real + i] = 1.0;
            row[cols - 1] = sign * rhs;
        }
        Tableau {
            rows,
            cols,
            real,
            data,
            basis: (0..rows).map(|i| real + i).collect(),
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.cols - 1)
    }

    fn pivot(&mut self, r: usize, c: usize, obj: &mut [f64]) {
        let cols = self.cols;
        let p = self.at(r, c);
        for v in &mut self.data[r * cols..(r + 1) * cols] {
            *v /= p;
        }
        let pivot_row: Vec<f64> = self.data[r * cols..(r + 1) * cols].to_vec();
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.data[i * cols + c];
            if f != 0.0 {
                for (v, pr) in self.data[i * cols..(i + 1) * cols].iter_mut().zip(&pivot_row) {
                    *v -= f * pr;
                }
                self.data[i * cols + c] = 0.0;
            }
        }
        let f = obj[c];
        if f != 0.0 {
            for (v, pr) in obj.iter_mut().zip(&pivot_row) {
                *v -= f * pr;
            }
            obj[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Reduced-cost row for column costs `cost` (length `cols - 1`); last
    /// entry holds minus the objective value.
    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut obj = vec![0.0; self.cols];
        obj[..self.cols - 1].copy_from_slice(cost);
        for i in 0..self.rows {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for (j, o) in obj.iter_mut().enumerate() {
                    *o -= cb * self.at(i, j);
                }
            }
        }
        obj
    }

    /// Runs simplex iterations; `allowed(j)` says whether column `j` may enter.
    fn optimize(
        &mut self,
        obj: &mut [f64],
        allowed: &dyn Fn(usize) -> bool,
        cap: usize,
    ) -> Result<(), LpError> {
        let mut degenerate_run = 0usize;
        for _ in 0..cap {
            let bland = degenerate_run > 50;
            let mut enter = None;
            let mut best = -COST_EPS;
            for j in 0..self.cols - 1 {
                if !allowed(j) || self.basis.contains(&j) {
                    continue;
                }
                if obj[j] < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = obj[j];
                }
            }
            let Some(c) = enter else { return Ok(()) };
            let mut leave = None;
            let mut ratio = f64::INFINITY;
            for i in 0..self.rows {
                let a = self.at(i, c);
                if a > PIVOT_EPS {
                    let q = self.rhs(i).max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some(l) => {
                            q < ratio - 1e-15
                                || (q <= ratio + 1e-15 && self.basis[i] < self.basis[l])
                        }
                    };
                    if better {
                        ratio = q;
                        leave = Some(i);
                    }
                }
            }
            let Some(r) = leave else {
                // Unbounded cannot happen: Σγ = 1 bounds the feasible set.
                return Ok(());
            };
            if ratio.abs() < 1e-14 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, c, obj);
        }
        Err(LpError::IterationLimit(cap))
    }

    fn real_solution(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = (0..self.rows)
            .filter(|&i| self.basis[i] < self.real)
            .map(|i| (self.basis[i], self.rhs(i).max(0.0)))
            .collect();
        out.sort_by_key(|&(j, _)| j);
        out
    }

    fn artificial_mass(&self) -> f64 {
        (0..self.rows)
            .filter(|&i| self.basis[i] >= self.real)
            .map(|i| self.rhs(i).abs())
            .sum()
    }

    /// Pivots zero-level artificials out of the basis where a real column
    /// allows it; rows where none does are redundant and stay inert.
    fn drive_out_artificials(&mut self, obj: &mut [f64]) {
        for i in 0..self.rows {
            if self.basis[i] < self.real {
                continue;
            }
            let mut pick = None;
            let mut mag = 1e-9;
            for j in 0..self.real {
                if self.basis.contains(&j) {
                    continue;
                }
                let a = self.at(i, j).abs();
                if a > mag {
                    mag = a;
                    pick = Some(j);
                }
            }
            if let Some(j) = pick {
                self.pivot(i, j, obj);
            }
        }
    }
}

fn residual_of(points: &[Vec<f64>], target: &[f64], sol: &[(usize, f64)]) -> Vec<f64> {
    let mut r = target.to_vec();
    for &(j, w) in sol {
        for (ri, pj) in r.iter_mut().zip(&points[j]) {
            *ri -= w * pj;
        }
    }
    r
}

/// Least-squares polish of the weights on a fixed support.
fn refine(points: &[Vec<f64>], target: &[f64], support: &[usize]) -> Option<Vec<f64>> {
    let d = target.len();
    let k = support.len();
    if k == 0 {
        return None;
    }
    let a = DMatrix::from_fn(d + 1, k, |i, j| if i < d { points[support[j]][i] } else { 1.0 });
    let b = DVector::from_fn(d + 1, |i, _| if i < d { target[i] } else { 1.0 });
    let svd = a.svd(true, true);
    let w = svd.solve(&b, 1e-12).ok()?;
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return None;
    }
    Some(w.iter().copied().collect())
}

/// Minimum-cost convex combination of `points` reproducing `target`.
///
/// `tol` is the feasibility tolerance on the phase-one optimum; targets
/// within it of the hull are treated as members (the small offset is carried
/// in `Combination::residual`).
pub fn min_cost_combination(
    points: &[Vec<f64>],
    costs: &[f64],
    target: &[f64],
    tol: f64,
) -> Result<HullLp, LpError> {
    if points.is_empty() {
        return Err(LpError::Empty);
    }
    if target.iter().any(|v| !v.is_finite())
        || costs.iter().any(|v| !v.is_finite())
        || points.iter().flatten().any(|v| !v.is_finite())
    {
        return Err(LpError::NonFinite);
    }
    let d = target.len();
    let cap = 50 * (points.len() + d + 1) + 1000;

    let phase_one = |goal: &[f64]| -> Result<Tableau, LpError> {
        let mut t = Tableau::new(points, goal);
        let mut cost = vec![0.0; t.cols - 1];
        for c in cost.iter_mut().skip(t.real) {
            *c = 1.0;
        }
        let mut obj = t.reduced_costs(&cost);
        t.optimize(&mut obj, &|_| true, cap)?;
        Ok(t)
    };

    let mut t = phase_one(target)?;
    let gap = t.artificial_mass();
    if gap > tol {
        return Ok(HullLp::Infeasible { gap });
    }
    if gap > 1e-13 {
        // Near-member: re-solve for the closest reproducible target so the
        // second phase starts from an exactly feasible basis.
        let sol = t.real_solution();
        let r = residual_of(points, target, &sol);
        let shifted: Vec<f64> = target.iter().zip(&r).map(|(a, b)| a - b).collect();
        t = phase_one(&shifted)?;
    }

    let real = t.real;
    let mut cost = vec![0.0; t.cols - 1];
    cost[..real].copy_from_slice(costs);
    let mut scratch = vec![0.0; t.cols];
    t.drive_out_artificials(&mut scratch);
    let mut obj = t.reduced_costs(&cost);
    t.optimize(&mut obj, &|j| j < real, cap)?;

    let mut sol = t.real_solution();
    sol.retain(|&(_, w)| w > 0.0);
    let support: Vec<usize> = sol.iter().map(|&(j, _)| j).collect();
    let mut weights: Vec<f64> = sol.iter().map(|&(_, w)| w).collect();
    let s: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= s;
    }
    if let Some(w) = refine(points, target, &support) {
        let before = residual_of(points, target, &support.iter().copied().zip(weights.iter().copied()).collect::<Vec<_>>());
        let after = residual_of(points, target, &support.iter().copied().zip(w.iter().copied()).collect::<Vec<_>>());
        let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let sum_after: f64 = w.iter().sum();
        if inf(&after) <= inf(&before) && (sum_after - 1.0).abs() <= 1e-12 {
            weights = w;
        }
    }
    let pairs: Vec<(usize, f64)> = support.iter().copied().zip(weights.iter().copied()).collect();
    let residual = residual_of(points, target, &pairs)
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let cost_value = pairs.iter().map(|&(j, w)| w * costs[j]).sum();
    Ok(HullLp::Optimal(Combination {
        support,
        weights,
        cost: cost_value,
        residual,
    }))
}
