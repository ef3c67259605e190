//! Time grid and transcription of the relaxed problem
//!
//! ```text
//! minimize   Σ_k H*(t_k, x[k], β[k]) Δ_k + g(x[K])
//! subject to x[k+1] = x[k] − β[k] Δ_k,  x[0] = x0,
//!            β[k] ∈ Conv(B(t_k, x[k])),  c(t_k, x[k]) ≤ 0,   k = 0..K−1.
//! ```

use crate::error::{DiscretizeError, TransformError};
use crate::linalg::KahanSum;
use crate::problem::{Builtin, ProblemSpec};
use crate::transform::{self, check_convexity_conditions, CheckStatus, ConvexityReport, ExtendedReal, FEAS_TOL};
use serde::Serialize;

/// Grid nodes `t_0 = t < … < t_K = T`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self, DiscretizeError> {
        if nodes.len() < 2 || nodes.windows(2).any(|w| !(w[1] > w[0])) || nodes.iter().any(|t| !t.is_finite()) {
            return Err(DiscretizeError::BadNodes);
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of steps `K`.
    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    /// `Δ_k = t_{k+1} − t_k`.
    pub fn delta(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    /// Largest step `δ`.
    pub fn max_step(&self) -> f64 {
        (0..self.steps()).map(|k| self.delta(k)).fold(0.0, f64::max)
    }

    pub fn start(&self) -> f64 {
        self.nodes[0]
    }

    pub fn end(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }
}

/// Uniform grid with `k` steps on `[t, tt]`.
pub fn make_grid(t: f64, tt: f64, k: usize) -> Result<TimeGrid, DiscretizeError> {
    if k == 0 {
        return Err(DiscretizeError::NoSteps);
    }
    if !(t < tt) {
        return Err(DiscretizeError::EmptyHorizon(t, tt));
    }
    let h = (tt - t) / k as f64;
    let mut nodes: Vec<f64> = (0..=k).map(|i| t + i as f64 * h).collect();
    nodes[k] = tt;
    TimeGrid::from_nodes(nodes)
}

/// Scalar counts of a transcription.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ProgramCounts {
    pub variables: usize,
    pub dynamics_equalities: usize,
    pub norm_ball_constraints: usize,
    pub affine_inequalities: usize,
    pub arc_constraints: usize,
    pub linking_equalities: usize,
    pub state_constraints: usize,
}

/// Worst violations of each constraint class at a candidate point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Residuals {
    pub initial: f64,
    pub dynamics: f64,
    pub control_set: f64,
    pub state: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.initial.max(self.dynamics).max(self.control_set).max(self.state)
    }
}

/// The discretized relaxed program.
///
/// States are carried explicitly unless the program is `reduced`, in which
/// case `x[k] = x0 − Σ_{j<k} β[j] Δ_j` is substituted and only `β` remains.
#[derive(Clone, Debug)]
pub struct TranscribedProgram {
    pub spec: ProblemSpec,
    pub grid: TimeGrid,
    pub reduced: bool,
    pub allow_nonconvex: bool,
    pub convexity: ConvexityReport,
}

impl TranscribedProgram {
    pub fn state_dim(&self) -> usize {
        self.spec.state_dim
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn x0(&self) -> &[f64] {
        &self.spec.initial_state
    }

    /// Rows the state constraint contributes per node. The gear built-in's
    /// `|x₂| ≤ limit` is two affine rows.
    pub fn state_rows_per_node(&self) -> usize {
        match (&self.spec.builtin, &self.spec.state_constraint) {
            (_, None) => 0,
            (Some(Builtin::Gear4d(_)), Some(_)) => 2,
            (_, Some(_)) => 1,
        }
    }

    pub fn counts(&self) -> ProgramCounts {
        let (n, k) = (self.state_dim(), self.steps());
        let set = transform::conv_control_set(&self.spec, self.grid.start(), self.x0());
        let mut c = ProgramCounts {
            variables: if self.reduced { k * n } else { (k + 1) * n + k * n },
            dynamics_equalities: if self.reduced { 0 } else { k * n + n },
            norm_ball_constraints: 0,
            affine_inequalities: 0,
            arc_constraints: 0,
            linking_equalities: k * set.equalities.len(),
            state_constraints: k * self.state_rows_per_node(),
        };
        for a in &set.atoms {
            match a {
                transform::Atom::Affine { .. } => c.affine_inequalities += k,
                transform::Atom::NormBall { .. } => c.norm_ball_constraints += k,
                transform::Atom::ArcEpigraph { .. } => c.arc_constraints += k,
            }
        }
        c
    }

    /// States generated by `β` through the exact dynamics.
    pub fn states_from_velocities(&self, beta: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut xs = Vec::with_capacity(beta.len() + 1);
        xs.push(self.x0().to_vec());
        for (k, b) in beta.iter().enumerate() {
            let dt = self.grid.delta(k);
            let next = xs[k].iter().zip(b).map(|(x, v)| x - v * dt).collect();
            xs.push(next);
        }
        xs
    }

    /// `Σ_k H*(t_k, x[k], β[k]) Δ_k + g(x[K])`.
    pub fn objective(&self, x: &[Vec<f64>], beta: &[Vec<f64>]) -> Result<ExtendedReal, TransformError> {
        let mut acc = KahanSum::new(0.0);
        for (k, b) in beta.iter().enumerate() {
            match transform::hstar(&self.spec, self.grid.nodes()[k], &x[k], b)? {
                ExtendedReal::Finite(v) => acc.add(v * self.grid.delta(k)),
                ExtendedReal::PosInfinity => return Ok(ExtendedReal::PosInfinity),
            }
        }
        acc.add(self.spec.terminal(&x[self.steps()]));
        Ok(ExtendedReal::Finite(acc.value()))
    }

    /// Objective of the reduced program as a function of `β` alone.
    pub fn reduced_objective(&self, beta: &[Vec<f64>]) -> Result<ExtendedReal, TransformError> {
        let x = self.states_from_velocities(beta);
        self.objective(&x, beta)
    }

    /// Constraint violations at `(x, β)`.
    pub fn residuals(&self, x: &[Vec<f64>], beta: &[Vec<f64>]) -> Result<Residuals, TransformError> {
        let mut r = Residuals {
            initial: crate::linalg::max_abs_diff(&x[0], self.x0()),
            ..Default::default()
        };
        for (k, b) in beta.iter().enumerate() {
            let s = self.grid.nodes()[k];
            let dt = self.grid.delta(k);
            for i in 0..self.state_dim() {
                r.dynamics = r.dynamics.max((x[k + 1][i] - x[k][i] + b[i] * dt).abs());
            }
            r.control_set = r.control_set.max(transform::membership_residual(&self.spec, s, &x[k], b)?);
            r.state = r.state.max(self.spec.constraint(s, &x[k]).max(0.0));
        }
        Ok(r)
    }
}

/// Transcribes `spec` on `grid`. Fails when the relaxed program is not known
/// to be convex, unless `allow_nonconvex` is set.
pub fn transcribe(spec: &ProblemSpec, grid: &TimeGrid, allow_nonconvex: bool) -> Result<TranscribedProgram, DiscretizeError> {
    let convexity = check_convexity_conditions(spec);
    if convexity.condition2 != CheckStatus::Pass && !allow_nonconvex {
        let failing: Vec<&str> = convexity
            .condition2_items
            .iter()
            .filter(|i| i.status != CheckStatus::Pass)
            .map(|i| i.name.as_str())
            .collect();
        return Err(DiscretizeError::Nonconvex(failing.join(", ")));
    }
    let mut spec = spec.clone();
    let (t0, t1) = (grid.start(), grid.end());
    if (t0, t1) != spec.horizon {
        spec.horizon = (t0, t1);
    }
    Ok(TranscribedProgram {
        spec,
        grid: grid.clone(),
        reduced: false,
        allow_nonconvex,
        convexity,
    })
}

/// Substitutes the dynamics, leaving `β` as the only variables.
pub fn eliminate_states(program: &TranscribedProgram) -> TranscribedProgram {
    TranscribedProgram {
        reduced: true,
        ..program.clone()
    }
}

/// Feasibility tolerance used when reporting on programs.
pub const RESIDUAL_TOL: f64 = FEAS_TOL;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::make_builtin;
    use serde_json::Map;

    #[test]
    fn uniform_grids() {
        let g = make_grid(0.0, 1.0, 4).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = make_grid(0.0, 10.0, 500).unwrap();
        assert!((g.max_step() - 0.02).abs() < 1e-14);
        assert!(matches!(make_grid(1.0, 1.0, 3), Err(DiscretizeError::EmptyHorizon(..))));
        assert!(matches!(make_grid(0.0, 1.0, 0), Err(DiscretizeError::NoSteps)));
        assert!(TimeGrid::from_nodes(vec![0.0, 0.5, 0.5, 1.0]).is_err());
    }

    #[test]
    fn vehicle_counts() {
        let spec = make_builtin("vehicle2d", &Map::new()).unwrap();
        let p = transcribe(&spec, &make_grid(0.0, 1.0, 100).unwrap(), false).unwrap();
        let c = p.counts();
        assert_eq!(c.variables, 202 + 200);
        assert_eq!(c.norm_ball_constraints, 100);
        assert_eq!(c.state_constraints, 0);
        let r = eliminate_states(&transcribe(&spec, &make_grid(0.0, 1.0, 2).unwrap(), false).unwrap());
        assert_eq!(r.counts().variables, 4);
    }

    #[test]
    fn gear_counts() {
        let spec = make_builtin("gear4d", &Map::new()).unwrap();
        let p = transcribe(&spec, &make_grid(0.0, 1.0, 50).unwrap(), false).unwrap();
        let c = p.counts();
        assert_eq!(c.state_constraints, 100);
        assert_eq!(c.linking_equalities, 100);
        assert_eq!(c.affine_inequalities, 150);
    }

    #[test]
    fn formation_objective_is_stage_cost_sum() {
        let spec = make_builtin("formation12d", &Map::new()).unwrap();
        let grid = make_grid(0.0, 10.0, 200).unwrap();
        let p = transcribe(&spec, &grid, false).unwrap();
        // Coast: zero acceleration keeps each agent's velocity.
        let beta: Vec<Vec<f64>> = vec![vec![0.0; 12]; 200];
        let x = p.states_from_velocities(&beta);
        let obj = p.objective(&x, &beta).unwrap().to_f64();
        let mut want = 0.0;
        for k in 0..200 {
            want += spec.stage(grid.nodes()[k], &x[k], &[0.0; 6]) * grid.delta(k);
        }
        assert!((obj - want).abs() < 1e-9);
    }

    #[test]
    fn substitution_keeps_feasibility() {
        let spec = make_builtin("vehicle2d", &Map::new()).unwrap();
        let p = transcribe(&spec, &make_grid(0.0, 1.0, 10).unwrap(), false).unwrap();
        let beta: Vec<Vec<f64>> = (0..10).map(|k| vec![(k as f64).cos() * 0.5, 0.3]).collect();
        let x = p.states_from_velocities(&beta);
        let r = p.residuals(&x, &beta).unwrap();
        assert!(r.dynamics <= 1e-15);
        assert!(r.max() <= 1e-15);
    }

    #[test]
    fn nonconvex_needs_flag() {
        use crate::problem::{ControlSetDescriptor, ProblemSpec};
        use std::sync::Arc;
        let spec = ProblemSpec::new(
            "unstructured",
            1,
            (0.0, 1.0),
            vec![0.0],
            Arc::new(|_, x, a, out| out[0] = x[0] * a[0]),
            Arc::new(|_, _, _| 0.0),
            Arc::new(|x| x[0] * x[0]),
            ControlSetDescriptor::Box {
                lower: vec![-1.0],
                upper: vec![1.0],
            },
        )
        .unwrap();
        let grid = make_grid(0.0, 1.0, 4).unwrap();
        assert!(matches!(transcribe(&spec, &grid, false), Err(DiscretizeError::Nonconvex(_))));
        assert!(transcribe(&spec, &grid, true).is_ok());
    }
}
