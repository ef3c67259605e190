//! Per-step parametrisations of the velocity control.
//!
//! [`AnalyticModel`] works in the shifted velocity `u = β + M x`, where the
//! built-ins' control sets are state independent and have exact projections.
//! [`HullModel`] uses simplex weights over the sampled controls, so that
//! `β = −Σ γ_j f(t, x, a_j)` lies in the sampled hull by construction and the
//! stage cost `Σ γ_j L(t, x, a_j)` attains the convexified conjugate at the
//! optimum.

use super::terms::{AffineMap, ConvexTerm};
use crate::discretize::TranscribedProgram;
use crate::linalg::{axpy, dot, mat_t_vec_acc, mat_vec};
use crate::problem::{Builtin, ProblemSpec};
use crate::transform::analytic::{self, Geometry};
use crate::transform::set::{nearest_hull_weights, project_simplex};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub(crate) trait StepModel: Sync {
    /// Length of the step-`k` variable.
    fn var_dim(&self, k: usize) -> usize;
    fn project(&self, k: usize, v: &mut [f64]);
    /// Variable whose velocity is the projection of zero at `x`.
    fn initial(&self, k: usize, x: &[f64]) -> Vec<f64>;
    fn random(&self, k: usize, x: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64>;
    /// `x[k+1]` from `x[k]` and the step variable.
    fn advance(&self, k: usize, x: &[f64], v: &[f64], out: &mut [f64]);
    /// Adds `lamᵀ ∂x[k+1]/∂x` to `gx` and `lamᵀ ∂x[k+1]/∂v` to `gv`.
    fn advance_adjoint(&self, k: usize, x: &[f64], v: &[f64], lam: &[f64], gx: &mut [f64], gv: &mut [f64]);
    /// `Δ_k` times the (smoothed) stage cost; gradients added, scaled by `scale`.
    fn stage(&self, k: usize, x: &[f64], v: &[f64], mu: f64, scale: f64, grads: Option<(&mut [f64], &mut [f64])>) -> f64;
    /// `β[k]`.
    fn velocity(&self, k: usize, x: &[f64], v: &[f64]) -> Vec<f64>;
    /// Step variable reproducing `β[k]` at `x[k]` (for diagnostics).
    fn from_velocity(&self, k: usize, x: &[f64], beta: &[f64]) -> Vec<f64>;
    /// Number of nonsmooth norm terms per step, for the smoothing budget.
    fn smoothed_terms(&self) -> usize;
    /// Separable `Lx(t_k, ·)` when it is a max of norms.
    fn norm_state_term(&self, _k: usize) -> Option<&[AffineMap]> {
        None
    }
    /// [`StepModel::stage`] without the term returned by
    /// [`StepModel::norm_state_term`].
    fn control_stage(&self, k: usize, x: &[f64], v: &[f64], scale: f64, grads: Option<(&mut [f64], &mut [f64])>) -> f64 {
        self.stage(k, x, v, 0.0, scale, grads)
    }
}

/// Closed-form model for the built-ins.
pub(crate) struct AnalyticModel {
    pub(super) geom: Geometry,
    pub(super) deltas: Vec<f64>,
    /// `Lx(t_k, ·)` per step.
    pub(super) state_cost: Vec<ConvexTerm>,
    /// Linear control-part cost in `u`.
    pub(super) control_cost: Option<Vec<f64>>,
}

impl AnalyticModel {
    pub fn new(b: &Builtin, program: &TranscribedProgram) -> Self {
        let geom = analytic::geometry(b);
        let n = geom.n;
        let nodes = program.grid.nodes();
        let k = program.steps();
        let state_cost = (0..k)
            .map(|i| match b {
                Builtin::Formation12d(p) => {
                    let s = nodes[i];
                    let p = *p;
                    let maps = (0..3)
                        .map(|r| {
                            AffineMap::from_fn(n, move |x| {
                                crate::problem::builtins::formation_residuals(&p, s, x)[r].to_vec()
                            })
                        })
                        .collect();
                    ConvexTerm::MaxOfNorms(maps)
                }
                _ => ConvexTerm::Zero,
            })
            .collect();
        let control_cost = match b {
            Builtin::Gear4d(p) => {
                let (alpha, beta) = analytic::gear_hstar_coefficients(p);
                Some(vec![0.0, alpha, 0.0, beta])
            }
            _ => None,
        };
        Self {
            geom,
            deltas: (0..k).map(|i| program.grid.delta(i)).collect(),
            state_cost,
            control_cost,
        }
    }

    fn mx(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.geom.n];
        for &(i, j) in &self.geom.links {
            out[i] += x[j];
        }
        out
    }
}

impl StepModel for AnalyticModel {
    fn var_dim(&self, _k: usize) -> usize {
        self.geom.n
    }

    fn project(&self, _k: usize, v: &mut [f64]) {
        self.geom.project_u(v);
    }

    fn initial(&self, _k: usize, x: &[f64]) -> Vec<f64> {
        let mut u = self.mx(x);
        self.geom.project_u(&mut u);
        u
    }

    fn random(&self, _k: usize, _x: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        // Uniform in a box around the region, then projected: lands on the
        // boundary often and in the interior often enough.
        let mut u: Vec<f64> = (0..self.geom.n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        self.geom.project_u(&mut u);
        u
    }

    fn advance(&self, k: usize, x: &[f64], v: &[f64], out: &mut [f64]) {
        let dt = self.deltas[k];
        for i in 0..x.len() {
            out[i] = x[i] - dt * v[i];
        }
        for &(i, j) in &self.geom.links {
            out[i] += dt * x[j];
        }
    }

    fn advance_adjoint(&self, k: usize, _x: &[f64], _v: &[f64], lam: &[f64], gx: &mut [f64], gv: &mut [f64]) {
        let dt = self.deltas[k];
        for i in 0..lam.len() {
            gx[i] += lam[i];
            gv[i] -= dt * lam[i];
        }
        for &(i, j) in &self.geom.links {
            gx[j] += dt * lam[i];
        }
    }

    fn stage(&self, k: usize, x: &[f64], v: &[f64], mu: f64, scale: f64, grads: Option<(&mut [f64], &mut [f64])>) -> f64 {
        let dt = self.deltas[k];
        let (gx, gv) = match grads {
            Some((gx, gv)) => (Some(gx), Some(gv)),
            None => (None, None),
        };
        let mut val = self.state_cost[k].smoothed(x, mu, scale * dt, gx);
        if let Some(c) = &self.control_cost {
            val += dot(c, v);
            if let Some(gv) = gv {
                axpy(scale * dt, c, gv);
            }
        }
        dt * val
    }

    fn velocity(&self, _k: usize, x: &[f64], v: &[f64]) -> Vec<f64> {
        self.geom.unshift(x, v)
    }

    fn from_velocity(&self, _k: usize, x: &[f64], beta: &[f64]) -> Vec<f64> {
        self.geom.shift(x, beta)
    }

    fn smoothed_terms(&self) -> usize {
        match self.state_cost.first() {
            Some(ConvexTerm::MaxOfNorms(_)) => 1,
            _ => 0,
        }
    }

    fn norm_state_term(&self, k: usize) -> Option<&[AffineMap]> {
        match &self.state_cost[k] {
            ConvexTerm::MaxOfNorms(maps) => Some(maps),
            _ => None,
        }
    }

    fn control_stage(&self, k: usize, _x: &[f64], v: &[f64], scale: f64, grads: Option<(&mut [f64], &mut [f64])>) -> f64 {
        let dt = self.deltas[k];
        let Some(c) = &self.control_cost else {
            return 0.0;
        };
        if let Some((_, gv)) = grads {
            axpy(scale * dt, c, gv);
        }
        dt * dot(c, v)
    }
}

/// Generic model over the sampled controls.
pub(crate) struct HullModel {
    spec: ProblemSpec,
    nodes: Vec<f64>,
    deltas: Vec<f64>,
    controls: Vec<Vec<f64>>,
    /// Structured problems: `M(t_k)`, `φ(t_k, a_j)` and `La(t_k, a_j)`.
    split: Option<Vec<SplitStep>>,
}

struct SplitStep {
    m: DMatrix<f64>,
    phi: Vec<Vec<f64>>,
    la: Vec<f64>,
}

const FD_STEP: f64 = 1e-6;

impl HullModel {
    pub fn new(program: &TranscribedProgram) -> Self {
        let spec = program.spec.clone();
        let controls = spec.control_sample().to_vec();
        let k = program.steps();
        let nodes = program.grid.nodes()[..k].to_vec();
        let split = spec.structured.as_ref().map(|sf| {
            nodes
                .iter()
                .map(|&s| {
                    let phi = controls
                        .iter()
                        .map(|a| {
                            let mut out = vec![0.0; spec.state_dim];
                            (sf.phi)(s, a, &mut out);
                            out
                        })
                        .collect();
                    SplitStep {
                        m: (sf.m)(s),
                        phi,
                        la: controls.iter().map(|a| (sf.la)(s, a)).collect(),
                    }
                })
                .collect()
        });
        Self {
            deltas: (0..k).map(|i| program.grid.delta(i)).collect(),
            spec,
            nodes,
            controls,
            split,
        }
    }

    /// `Σ_j γ_j f(t_k, x, a_j)`.
    fn mixed_f(&self, k: usize, x: &[f64], v: &[f64]) -> Vec<f64> {
        let n = self.spec.state_dim;
        let mut out = vec![0.0; n];
        match &self.split {
            Some(st) => {
                let st = &st[k];
                mat_vec(&st.m, x, &mut out);
                for (g, p) in v.iter().zip(&st.phi) {
                    if *g != 0.0 {
                        axpy(*g, p, &mut out);
                    }
                }
            }
            None => {
                for (g, a) in v.iter().zip(&self.controls) {
                    if *g != 0.0 {
                        axpy(*g, &self.spec.f(self.nodes[k], x, a), &mut out);
                    }
                }
            }
        }
        out
    }

    fn mixed_cost(&self, k: usize, x: &[f64], v: &[f64]) -> f64 {
        let s = self.nodes[k];
        match (&self.split, &self.spec.structured) {
            (Some(st), Some(sf)) => (sf.lx)(s, x) + dot(v, &st[k].la),
            _ => v
                .iter()
                .zip(&self.controls)
                .filter(|(g, _)| **g != 0.0)
                .map(|(g, a)| g * self.spec.stage(s, x, a))
                .sum(),
        }
    }
}

impl StepModel for HullModel {
    fn var_dim(&self, _k: usize) -> usize {
        self.controls.len()
    }

    fn project(&self, _k: usize, v: &mut [f64]) {
        project_simplex(v);
    }

    fn initial(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let points: Vec<Vec<f64>> = self
            .controls
            .iter()
            .map(|a| self.spec.f(self.nodes[k], x, a).iter().map(|v| -v).collect())
            .collect();
        nearest_hull_weights(&points, &vec![0.0; self.spec.state_dim], 1e-9)
    }

    fn random(&self, _k: usize, _x: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut w: Vec<f64> = (0..self.controls.len()).map(|_| -rng.gen_range(f64::EPSILON..1.0f64).ln()).collect();
        let total: f64 = w.iter().sum();
        for v in &mut w {
            *v /= total;
        }
        w
    }

    fn advance(&self, k: usize, x: &[f64], v: &[f64], out: &mut [f64]) {
        let dt = self.deltas[k];
        let f = self.mixed_f(k, x, v);
        for i in 0..x.len() {
            out[i] = x[i] + dt * f[i];
        }
    }

    fn advance_adjoint(&self, k: usize, x: &[f64], v: &[f64], lam: &[f64], gx: &mut [f64], gv: &mut [f64]) {
        let dt = self.deltas[k];
        for i in 0..lam.len() {
            gx[i] += lam[i];
        }
        match &self.split {
            Some(st) => {
                let st = &st[k];
                mat_t_vec_acc(&st.m, lam, dt, gx);
                for (g, p) in gv.iter_mut().zip(&st.phi) {
                    *g += dt * dot(lam, p);
                }
            }
            None => {
                let s = self.nodes[k];
                for (g, a) in gv.iter_mut().zip(&self.controls) {
                    *g += dt * dot(lam, &self.spec.f(s, x, a));
                }
                let mut y = x.to_vec();
                for j in 0..x.len() {
                    let h = FD_STEP * (1.0 + x[j].abs());
                    y[j] = x[j] + h;
                    let up = self.mixed_f(k, &y, v);
                    y[j] = x[j] - h;
                    let dn = self.mixed_f(k, &y, v);
                    y[j] = x[j];
                    let d: Vec<f64> = up.iter().zip(&dn).map(|(a, b)| (a - b) / (2.0 * h)).collect();
                    gx[j] += dt * dot(lam, &d);
                }
            }
        }
    }

    fn stage(&self, k: usize, x: &[f64], v: &[f64], _mu: f64, scale: f64, grads: Option<(&mut [f64], &mut [f64])>) -> f64 {
        let dt = self.deltas[k];
        let val = self.mixed_cost(k, x, v);
        if let Some((gx, gv)) = grads {
            let s = self.nodes[k];
            match (&self.split, &self.spec.structured) {
                (Some(st), Some(_)) => axpy(scale * dt, &st[k].la, gv),
                _ => {
                    for (g, a) in gv.iter_mut().zip(&self.controls) {
                        *g += scale * dt * self.spec.stage(s, x, a);
                    }
                }
            }
            let mut y = x.to_vec();
            for j in 0..x.len() {
                let h = FD_STEP * (1.0 + x[j].abs());
                y[j] = x[j] + h;
                let up = self.mixed_cost(k, &y, v);
                y[j] = x[j] - h;
                let dn = self.mixed_cost(k, &y, v);
                y[j] = x[j];
                gx[j] += scale * dt * (up - dn) / (2.0 * h);
            }
        }
        dt * val
    }

    fn velocity(&self, k: usize, x: &[f64], v: &[f64]) -> Vec<f64> {
        self.mixed_f(k, x, v).iter().map(|f| -f).collect()
    }

    fn from_velocity(&self, k: usize, x: &[f64], beta: &[f64]) -> Vec<f64> {
        let points: Vec<Vec<f64>> = self
            .controls
            .iter()
            .map(|a| self.spec.f(self.nodes[k], x, a).iter().map(|v| -v).collect())
            .collect();
        nearest_hull_weights(&points, beta, 1e-10)
    }

    fn smoothed_terms(&self) -> usize {
        0
    }
}
