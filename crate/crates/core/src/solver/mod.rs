//! First-order solver for the transcribed program.
//!
//! The default algorithm is an augmented-Lagrangian outer loop over the state
//! constraints (and, for unreduced programs, the dynamics equalities) with an
//! accelerated projected-gradient inner loop on a Nesterov-smoothed
//! objective. The smoothing parameter is driven down by continuation. The
//! dynamics are eliminated by default, so returned trajectories satisfy them
//! exactly.

mod barrier;
mod model;
pub mod terms;

use crate::discretize::{Residuals, TranscribedProgram};
use crate::error::SolveError;
use crate::exec::Exec;
use crate::problem::Builtin;
use model::{AnalyticModel, HullModel, StepModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use crate::linalg::dot;
use terms::{AffineMap, ConvexTerm};

/// Deterministic generator used everywhere a seed is accepted.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Interior point when the stage cost carries norm terms and the problem
    /// is a built-in without state constraints; augmented Lagrangian
    /// otherwise.
    #[default]
    Auto,
    /// Augmented Lagrangian with accelerated projected gradient inside.
    AugmentedLagrangian,
    /// Projected subgradient with `c/√k` steps, or Polyak steps when
    /// `target_value` is given; constraints still enter through the
    /// augmented Lagrangian.
    Subgradient,
    /// Log-barrier path following on the epigraph form with Riccati-structured
    /// Newton steps. Built-ins without state constraints only.
    InteriorPoint,
}

/// How max-of-norms stage costs enter the inner problem.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// Epigraph when the stage cost has norm terms, smoothing otherwise.
    #[default]
    Auto,
    /// Nesterov smoothing with continuation in the smoothing parameter.
    Smoothed,
    /// One auxiliary scalar per norm term, bounded through second-order cone
    /// constraints handled by the augmented Lagrangian.
    Epigraph,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveOptions {
    /// Cap on inner iterations summed over all outer rounds.
    pub max_iterations: usize,
    pub tol_feasibility: f64,
    pub tol_objective: f64,
    pub algorithm: Algorithm,
    pub formulation: Formulation,
    pub random_seed: u64,
    /// Start from a random point instead of the projection of zero.
    pub random_init: bool,
    /// Positive factor applied to the objective (not to the constraints).
    pub objective_scale: f64,
    /// Known optimal value, enabling Polyak steps in the subgradient method.
    pub target_value: Option<f64>,
    /// Keep states as variables and enforce the dynamics by multipliers.
    pub unreduced: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 400_000,
            tol_feasibility: 1e-6,
            tol_objective: 1e-5,
            algorithm: Algorithm::Auto,
            formulation: Formulation::Auto,
            random_seed: 0,
            random_init: false,
            objective_scale: 1.0,
            target_value: None,
            unreduced: false,
        }
    }
}

impl SolveOptions {
    fn validate(&self) -> Result<(), SolveError> {
        let bad = |m: &str| Err(SolveError::BadOptions(m.into()));
        if !(self.tol_feasibility > 0.0) || !(self.tol_objective > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.objective_scale > 0.0) || !self.objective_scale.is_finite() {
            return bad("objective_scale must be positive and finite");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveResult {
    pub x_star: Vec<Vec<f64>>,
    pub beta_star: Vec<Vec<f64>>,
    pub objective: f64,
    pub residuals: Residuals,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub status: SolveStatus,
    /// Best feasible objective after each outer round (`+∞` before the first
    /// feasible iterate).
    pub history: Vec<f64>,
    /// State-constraint multipliers, one per constraint row and node.
    pub multipliers: Vec<f64>,
}

impl SolveResult {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Primal residuals and a stationarity surrogate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KktDiagnostics {
    pub residuals: Residuals,
    /// `‖v − P(v − ∇ℒ(v))‖₂` in the solver's variables, with the returned
    /// multipliers in `ℒ`.
    pub stationarity: f64,
}

struct Params {
    mu: f64,
    lam: Vec<f64>,
    rho: f64,
    eta: Vec<f64>,
    rho_dyn: f64,
    cone: Vec<f64>,
    rho_cone: f64,
}

/// `weight · max_i ‖A_i x[node] + c_i‖` replaced by `weight · t` with
/// `(A_i x[node] + c_i, t)` in the second-order cone.
struct EpiTerm {
    node: usize,
    weight: f64,
    maps: Vec<AffineMap>,
    /// Offset of the first cone multiplier.
    cone_off: usize,
}

struct Engine {
    model: Box<dyn StepModel>,
    n: usize,
    k: usize,
    x0: Vec<f64>,
    terminal: ConvexTerm,
    /// Constraint rows per node; node 0 is empty (fixed state).
    rows: Vec<Vec<ConvexTerm>>,
    row_start: Vec<usize>,
    v_off: Vec<usize>,
    v_len: usize,
    full: bool,
    scale: f64,
    epi: Vec<EpiTerm>,
    /// Steps whose state cost lives in `epi`.
    epi_stage: Vec<bool>,
    epi_terminal: bool,
    cone_len: usize,
    max_var: usize,
}

fn terminal_term(program: &TranscribedProgram) -> ConvexTerm {
    let spec = &program.spec;
    match &spec.builtin {
        Some(Builtin::Vehicle2d) => ConvexTerm::MaxOfNorms(vec![AffineMap::from_fn(spec.state_dim, |x| x.to_vec())]),
        Some(Builtin::Gear4d(p)) => ConvexTerm::Linear {
            w: vec![0.0, 0.0, p.terminal_weight, 0.0],
            r: 0.0,
        },
        Some(Builtin::Formation12d(_)) => ConvexTerm::Zero,
        None => {
            let g = spec.terminal_cost.clone();
            ConvexTerm::Opaque(std::sync::Arc::new(move |x| g(x)))
        }
    }
}

fn build_engine(program: &TranscribedProgram, opts: &SolveOptions) -> Engine {
    let spec = &program.spec;
    let n = spec.state_dim;
    let k = program.steps();
    let nodes = program.grid.nodes();
    let model: Box<dyn StepModel> = match &spec.builtin {
        Some(b) => Box::new(AnalyticModel::new(b, program)),
        None => Box::new(HullModel::new(program)),
    };
    let terminal = terminal_term(program);
    let mut rows = vec![Vec::new(); k];
    if let Some(c) = &spec.state_constraint {
        for (node, r) in rows.iter_mut().enumerate().skip(1) {
            match &spec.builtin {
                Some(Builtin::Gear4d(p)) => {
                    for sign in [1.0, -1.0] {
                        r.push(ConvexTerm::Linear {
                            w: vec![0.0, sign, 0.0, 0.0],
                            r: -p.speed_limit,
                        });
                    }
                }
                _ => {
                    let (c, s) = (c.clone(), nodes[node]);
                    r.push(ConvexTerm::Opaque(std::sync::Arc::new(move |x| c(s, x))));
                }
            }
        }
    }
    let mut row_start = Vec::with_capacity(k + 1);
    let mut acc = 0;
    for r in &rows {
        row_start.push(acc);
        acc += r.len();
    }
    row_start.push(acc);
    let mut v_off = Vec::with_capacity(k + 1);
    let mut off = 0;
    for i in 0..k {
        v_off.push(off);
        off += model.var_dim(i);
    }
    v_off.push(off);
    let max_var = (0..k).map(|i| model.var_dim(i)).max().unwrap_or(0);

    let has_norm_stage = (0..k).any(|i| model.norm_state_term(i).is_some());
    let use_epi = match opts.formulation {
        Formulation::Auto => has_norm_stage,
        Formulation::Smoothed => false,
        Formulation::Epigraph => true,
    };
    let mut epi = Vec::new();
    let mut epi_stage = vec![false; k];
    let mut cone_len = 0;
    let mut push = |node: usize, weight: f64, maps: &[AffineMap], epi: &mut Vec<EpiTerm>| {
        epi.push(EpiTerm {
            node,
            weight,
            maps: maps.to_vec(),
            cone_off: cone_len,
        });
        cone_len += maps.iter().map(|m| m.rows() + 1).sum::<usize>();
    };
    let mut epi_terminal = false;
    if use_epi {
        for (i, flag) in epi_stage.iter_mut().enumerate() {
            if let Some(maps) = model.norm_state_term(i) {
                push(i, program.grid.delta(i), maps, &mut epi);
                *flag = true;
            }
        }
        if let ConvexTerm::MaxOfNorms(maps) = &terminal {
            push(k, 1.0, maps, &mut epi);
            epi_terminal = true;
        }
    }
    Engine {
        model,
        n,
        k,
        x0: spec.initial_state.clone(),
        terminal,
        rows,
        row_start,
        v_off,
        v_len: off,
        full: opts.unreduced,
        scale: opts.objective_scale,
        epi,
        epi_stage,
        epi_terminal,
        cone_len,
        max_var,
    }
}

impl Engine {
    fn len(&self) -> usize {
        self.epi_off() + self.epi.len()
    }

    fn epi_off(&self) -> usize {
        self.v_len + if self.full { self.k * self.n } else { 0 }
    }

    /// Number of norm terms still smoothed.
    fn smoothed_terms(&self) -> usize {
        let stage = if self.epi_stage.iter().any(|&b| b) { 0 } else { self.model.smoothed_terms() };
        let terminal = matches!(self.terminal, ConvexTerm::MaxOfNorms(_)) && !self.epi_terminal;
        stage + usize::from(terminal)
    }

    /// States as one flat buffer of `K + 1` nodes.
    fn states_flat(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut xs = vec![0.0; (self.k + 1) * n];
        xs[..n].copy_from_slice(&self.x0);
        if self.full {
            xs[n..].copy_from_slice(&z[self.v_len..self.v_len + self.k * n]);
            return xs;
        }
        for k in 0..self.k {
            let (done, rest) = xs.split_at_mut((k + 1) * n);
            self.model.advance(k, &done[k * n..], self.v(z, k), &mut rest[..n]);
        }
        xs
    }

    fn v<'a>(&self, z: &'a [f64], k: usize) -> &'a [f64] {
        &z[self.v_off[k]..self.v_off[k + 1]]
    }

    /// Stored state `x[k]`, `k ≥ 1`, of an unreduced iterate.
    fn x_slot(&self, k: usize) -> std::ops::Range<usize> {
        let s = self.v_len + (k - 1) * self.n;
        s..s + self.n
    }

    fn rows_count(&self) -> usize {
        *self.row_start.last().unwrap_or(&0)
    }

    fn simulate(&self, z: &[f64]) -> Vec<Vec<f64>> {
        let mut xs = Vec::with_capacity(self.k + 1);
        xs.push(self.x0.clone());
        for k in 0..self.k {
            let mut next = vec![0.0; self.n];
            self.model.advance(k, &xs[k], self.v(z, k), &mut next);
            xs.push(next);
        }
        xs
    }

    fn states(&self, z: &[f64]) -> Vec<Vec<f64>> {
        if !self.full {
            return self.simulate(z);
        }
        let mut xs = Vec::with_capacity(self.k + 1);
        xs.push(self.x0.clone());
        for k in 1..=self.k {
            xs.push(z[self.x_slot(k)].to_vec());
        }
        xs
    }

    fn project(&self, z: &mut [f64]) {
        for k in 0..self.k {
            let r = self.v_off[k]..self.v_off[k + 1];
            self.model.project(k, &mut z[r]);
        }
    }

    /// Smoothed augmented Lagrangian and, optionally, its gradient.
    fn value_grad(&self, z: &[f64], p: &Params, grad: Option<&mut [f64]>) -> f64 {
        let n = self.n;
        let xs = self.states_flat(z);
        let node = |k: usize| &xs[k * n..(k + 1) * n];
        let s = self.scale;
        let want = grad.is_some();
        let mut g_store = Vec::new();
        let g: &mut [f64] = match grad {
            Some(g) => {
                g.fill(0.0);
                g
            }
            None => &mut g_store,
        };
        let mut val = 0.0;
        let mut lam_x = vec![0.0; n];
        if !self.epi_terminal {
            val += s * self.terminal.smoothed(node(self.k), p.mu, s, want.then_some(&mut lam_x[..]));
        }

        // Epigraph terms; state gradients are parked per node.
        let mut g_epi = if want && !self.epi.is_empty() { vec![0.0; (self.k + 1) * n] } else { Vec::new() };
        let off = self.epi_off();
        let mut u = Vec::new();
        for (j, term) in self.epi.iter().enumerate() {
            let t = z[off + j];
            val += s * term.weight * t;
            if want {
                g[off + j] += s * term.weight;
            }
            let mut c_off = term.cone_off;
            for m in &term.maps {
                let r = m.rows();
                let y = &p.cone[c_off..c_off + r + 1];
                u.resize(r, 0.0);
                m.apply_into(node(term.node), &mut u);
                for (ui, yi) in u.iter_mut().zip(y) {
                    *ui = yi - p.rho_cone * *ui;
                }
                let mut us = y[r] - p.rho_cone * t;
                terms::project_soc(&mut u, &mut us);
                let y2: f64 = y.iter().map(|v| v * v).sum();
                val += (dot(&u, &u) + us * us - y2) / (2.0 * p.rho_cone);
                if want {
                    let gn = &mut g_epi[term.node * n..(term.node + 1) * n];
                    m.adjoint_acc(&u, -1.0, gn);
                    g[off + j] -= us;
                }
                c_off += r + 1;
            }
        }
        if want && self.epi_terminal {
            crate::linalg::axpy(1.0, &g_epi[self.k * n..], &mut lam_x);
        }

        let mut e = vec![0.0; n];
        let mut gx = vec![0.0; n];
        let mut gv_buf = vec![0.0; self.max_var];
        for k in (0..self.k).rev() {
            let x = node(k);
            let v = self.v(z, k);
            let gv = &mut gv_buf[..v.len()];
            gx.fill(0.0);
            gv.fill(0.0);
            if self.full {
                // Dynamics residual e = x[k+1] − advance(x[k], v[k]).
                self.model.advance(k, x, v, &mut e);
                let next = node(k + 1);
                for i in 0..n {
                    e[i] = next[i] - e[i];
                    val += p.eta[k * n + i] * e[i] + 0.5 * p.rho_dyn * e[i] * e[i];
                    e[i] = p.eta[k * n + i] + p.rho_dyn * e[i];
                }
                if want {
                    crate::linalg::axpy(1.0, &e, &mut lam_x);
                    g[self.x_slot(k + 1)].copy_from_slice(&lam_x);
                    for w in e.iter_mut() {
                        *w = -*w;
                    }
                    self.model.advance_adjoint(k, x, v, &e, &mut gx, gv);
                }
            } else if want {
                self.model.advance_adjoint(k, x, v, &lam_x, &mut gx, gv);
            }
            let grads = want.then_some((&mut gx[..], &mut gv[..]));
            val += s * if self.epi_stage[k] {
                self.model.control_stage(k, x, v, s, grads)
            } else {
                self.model.stage(k, x, v, p.mu, s, grads)
            };
            for (j, row) in self.rows[k].iter().enumerate() {
                let li = p.lam[self.row_start[k] + j];
                let c = row.value(x);
                let m = (li + p.rho * c).max(0.0);
                val += (m * m - li * li) / (2.0 * p.rho);
                if want && m > 0.0 {
                    row.smoothed(x, 0.0, m, Some(&mut gx));
                }
            }
            if want {
                if !g_epi.is_empty() {
                    crate::linalg::axpy(1.0, &g_epi[k * n..(k + 1) * n], &mut gx);
                }
                g[self.v_off[k]..self.v_off[k + 1]].copy_from_slice(gv);
                std::mem::swap(&mut lam_x, &mut gx);
            }
        }
        val
    }

    /// Cone multiplier update; returns the objective shortfall
    /// `Σ weight · (max_i ‖A_i x + c_i‖ − t)₊` before the update.
    fn update_cones(&self, z: &[f64], p: &mut Params) -> f64 {
        let n = self.n;
        let xs = self.states_flat(z);
        let off = self.epi_off();
        let mut gap = 0.0;
        let mut u = Vec::new();
        for (j, term) in self.epi.iter().enumerate() {
            let t = z[off + j];
            let x = &xs[term.node * n..(term.node + 1) * n];
            let mut worst = 0.0f64;
            let mut c_off = term.cone_off;
            for m in &term.maps {
                let r = m.rows();
                u.resize(r, 0.0);
                m.apply_into(x, &mut u);
                worst = worst.max(crate::linalg::norm(&u));
                let y = &mut p.cone[c_off..c_off + r + 1];
                for (ui, yi) in u.iter_mut().zip(y.iter()) {
                    *ui = yi - p.rho_cone * *ui;
                }
                let mut us = y[r] - p.rho_cone * t;
                terms::project_soc(&mut u, &mut us);
                y[..r].copy_from_slice(&u);
                y[r] = us;
                c_off += r + 1;
            }
            gap += term.weight * (worst - t).max(0.0);
        }
        gap
    }

    /// Exact objective (unscaled, unsmoothed) and worst state-constraint
    /// violation along the re-simulated trajectory.
    fn true_objective(&self, z: &[f64]) -> (f64, f64, Vec<Vec<f64>>) {
        let xs = self.simulate(z);
        let mut acc = crate::linalg::KahanSum::new(0.0);
        for k in 0..self.k {
            acc.add(self.model.stage(k, &xs[k], self.v(z, k), 0.0, 1.0, None));
        }
        acc.add(self.terminal.value(&xs[self.k]));
        let mut viol = 0.0f64;
        for k in 0..self.k {
            for row in &self.rows[k] {
                viol = viol.max(row.value(&xs[k]));
            }
        }
        (acc.value(), viol.max(0.0), xs)
    }

    fn initial_point(&self, opts: &SolveOptions) -> Vec<f64> {
        let mut z = vec![0.0; self.len()];
        let mut rng = seeded_rng(opts.random_seed);
        let mut x = self.x0.clone();
        for k in 0..self.k {
            let v = if opts.random_init {
                self.model.random(k, &x, &mut rng)
            } else {
                self.model.initial(k, &x)
            };
            let mut next = vec![0.0; self.n];
            self.model.advance(k, &x, &v, &mut next);
            z[self.v_off[k]..self.v_off[k + 1]].copy_from_slice(&v);
            if self.full {
                let r = self.x_slot(k + 1);
                z[r].copy_from_slice(&next);
            }
            x = next;
        }
        let xs = self.states_flat(&z);
        let off = self.epi_off();
        for (j, term) in self.epi.iter().enumerate() {
            let x = &xs[term.node * self.n..(term.node + 1) * self.n];
            z[off + j] = term.maps.iter().map(|m| crate::linalg::norm(&m.apply(x))).fold(0.0, f64::max);
        }
        z
    }
}

struct InnerOutcome {
    iterations: usize,
    converged: bool,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Accelerated projected gradient with backtracking and function-value
/// restarts.
fn fista(eng: &Engine, z: &mut Vec<f64>, p: &Params, lip: &mut f64, max_iter: usize, tol: f64) -> InnerOutcome {
    let len = z.len();
    let mut y = z.clone();
    let mut g = vec![0.0; len];
    let mut cand = vec![0.0; len];
    let mut f_x = eng.value_grad(z, p, None);
    let mut t = 1.0f64;
    for it in 0..max_iter {
        let f_y = eng.value_grad(&y, p, Some(&mut g));
        let mut f_c;
        loop {
            for i in 0..len {
                cand[i] = y[i] - g[i] / *lip;
            }
            eng.project(&mut cand);
            f_c = eng.value_grad(&cand, p, None);
            let mut lin = 0.0;
            for i in 0..len {
                lin += g[i] * (cand[i] - y[i]);
            }
            let quad = 0.5 * *lip * dist2(&cand, &y);
            if f_c <= f_y + lin + quad + 1e-12 * f_y.abs().max(1.0) || *lip > 1e16 {
                break;
            }
            *lip *= 2.0;
        }
        let step = dist2(&cand, &y).sqrt() * *lip;
        if f_c > f_x && t > 1.0 {
            // Restart momentum from the last accepted point.
            t = 1.0;
            y.copy_from_slice(z);
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        for i in 0..len {
            y[i] = cand[i] + mom * (cand[i] - z[i]);
        }
        std::mem::swap(z, &mut cand);
        f_x = f_c;
        t = t_next;
        *lip *= 0.97;
        if step <= tol * (1.0 + f_x.abs()) {
            return InnerOutcome {
                iterations: it + 1,
                converged: true,
            };
        }
    }
    InnerOutcome {
        iterations: max_iter,
        converged: false,
    }
}

/// Projected subgradient on the unsmoothed augmented Lagrangian.
fn subgradient(eng: &Engine, z: &mut [f64], p: &Params, opts: &SolveOptions, start: usize, max_iter: usize) -> InnerOutcome {
    let len = z.len();
    let mut g = vec![0.0; len];
    let mut best = z.to_vec();
    let mut best_f = eng.value_grad(z, p, None);
    let step_scale = 1.0;
    for it in 0..max_iter {
        let f = eng.value_grad(z, p, Some(&mut g));
        if f < best_f {
            best_f = f;
            best.copy_from_slice(z);
        }
        let gn2: f64 = g.iter().map(|v| v * v).sum();
        if gn2 == 0.0 {
            break;
        }
        let step = match opts.target_value {
            Some(target) => ((f - target * eng.scale).max(0.0) / gn2).max(1e-12),
            None => step_scale / ((start + it + 1) as f64).sqrt() / gn2.sqrt(),
        };
        for i in 0..len {
            z[i] -= step * g[i];
        }
        eng.project(z);
    }
    let f = eng.value_grad(z, p, None);
    if f >= best_f {
        z.copy_from_slice(&best);
    }
    InnerOutcome {
        iterations: max_iter,
        converged: false,
    }
}

fn certify_initial(program: &TranscribedProgram, tol: f64) -> Result<(), SolveError> {
    let spec = &program.spec;
    let c0 = spec.constraint(program.grid.start(), &spec.initial_state);
    if c0 > tol {
        return Err(SolveError::Infeasible(format!(
            "state constraint at the initial state is {c0:e} > 0"
        )));
    }
    Ok(())
}

/// The algorithm [`Algorithm::Auto`] resolves to.
pub fn auto_algorithm(program: &TranscribedProgram) -> Algorithm {
    let spec = &program.spec;
    let norm_stage = matches!(spec.builtin, Some(Builtin::Formation12d(_)));
    if norm_stage && spec.state_constraint.is_none() {
        Algorithm::InteriorPoint
    } else {
        Algorithm::AugmentedLagrangian
    }
}

/// Solves the program. Deterministic for fixed options.
pub fn solve(program: &TranscribedProgram, opts: &SolveOptions) -> Result<SolveResult, SolveError> {
    opts.validate()?;
    certify_initial(program, opts.tol_feasibility)?;
    let algorithm = match opts.algorithm {
        Algorithm::Auto => auto_algorithm(program),
        a => a,
    };
    if algorithm == Algorithm::InteriorPoint {
        return barrier::solve(program, opts);
    }
    let eng = build_engine(program, opts);
    let mut z = eng.initial_point(opts);

    let horizon = program.grid.end() - program.grid.start();
    let terms = eng.smoothed_terms() as f64;
    let mu_min = if terms > 0.0 {
        0.2 * opts.tol_objective / (horizon.max(1.0) * terms)
    } else {
        0.0
    };
    let mut p = Params {
        mu: if terms > 0.0 { (1e-2f64).max(mu_min) } else { 0.0 },
        lam: vec![0.0; eng.rows_count()],
        rho: 10.0,
        eta: vec![0.0; if eng.full { eng.k * eng.n } else { 0 }],
        rho_dyn: 10.0,
        cone: vec![0.0; eng.cone_len],
        rho_cone: 1.0,
    };
    let mut lip = 1.0;
    let mut prev_gap = f64::INFINITY;
    let mut iterations = 0;
    let mut history = Vec::new();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut prev_obj = f64::INFINITY;
    let mut prev_viol = f64::INFINITY;
    let mut status = SolveStatus::MaxIterations;
    let mut outer = 0;
    let mut inner_tol = 1e-2;
    let final_tol = 1e-3 * opts.tol_objective;

    while iterations < opts.max_iterations {
        outer += 1;
        let budget = (opts.max_iterations - iterations).min(50_000);
        let inner = match algorithm {
            Algorithm::Auto | Algorithm::AugmentedLagrangian => fista(&eng, &mut z, &p, &mut lip, budget, inner_tol),
            Algorithm::Subgradient => subgradient(&eng, &mut z, &p, opts, iterations, budget.min(5_000)),
            Algorithm::InteriorPoint => unreachable!("dispatched above"),
        };
        iterations += inner.iterations;

        // Multiplier updates.
        let xs = eng.states(&z);
        let mut viol = 0.0f64;
        for k in 0..eng.k {
            for (j, row) in eng.rows[k].iter().enumerate() {
                let idx = eng.row_start[k] + j;
                let c = row.value(&xs[k]);
                viol = viol.max(c);
                p.lam[idx] = (p.lam[idx] + p.rho * c).max(0.0);
            }
        }
        let mut dyn_viol = 0.0f64;
        if eng.full {
            let mut e = vec![0.0; eng.n];
            for k in 0..eng.k {
                eng.model.advance(k, &xs[k], eng.v(&z, k), &mut e);
                for i in 0..eng.n {
                    let r = xs[k + 1][i] - e[i];
                    dyn_viol = dyn_viol.max(r.abs());
                    p.eta[k * eng.n + i] += p.rho_dyn * r;
                }
            }
        }
        let gap = eng.update_cones(&z, &mut p);
        let gap_tol = 0.5 * opts.tol_objective;
        if gap > 0.25 * prev_gap && gap > 0.1 * gap_tol {
            p.rho_cone = (p.rho_cone * 10.0).min(1e8);
        }
        prev_gap = gap;
        let viol_all = viol.max(0.0).max(dyn_viol);
        if viol_all > 0.25 * prev_viol && viol_all > 0.1 * opts.tol_feasibility {
            p.rho = (p.rho * 10.0).min(1e10);
            p.rho_dyn = (p.rho_dyn * 10.0).min(1e10);
        }
        prev_viol = viol_all;

        let (obj, state_viol, _) = eng.true_objective(&z);
        if state_viol <= opts.tol_feasibility && best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, z.clone()));
        }
        history.push(best.as_ref().map_or(f64::INFINITY, |(b, _)| *b));

        let settled = (obj - prev_obj).abs() <= opts.tol_objective * (1.0 + obj.abs());
        prev_obj = obj;
        let tight = gap <= gap_tol * (1.0 + obj.abs());
        if p.mu <= mu_min && inner.converged && viol_all <= 0.5 * opts.tol_feasibility && settled && tight && inner_tol <= final_tol {
            status = SolveStatus::Converged;
            break;
        }
        if algorithm == Algorithm::Subgradient
            && p.mu <= mu_min
            && viol_all <= 0.5 * opts.tol_feasibility
            && settled
            && outer > 3
        {
            status = SolveStatus::Converged;
            break;
        }
        p.mu = (p.mu * 0.1).max(mu_min);
        inner_tol = (inner_tol * 0.1).max(final_tol);
    }

    let z_out = best.map(|(_, z)| z).unwrap_or(z);
    let (objective, _, xs) = eng.true_objective(&z_out);
    let beta: Vec<Vec<f64>> = (0..eng.k).map(|k| eng.model.velocity(k, &xs[k], eng.v(&z_out, k))).collect();
    let residuals = program.residuals(&xs, &beta)?;
    if status == SolveStatus::Converged && residuals.max() > opts.tol_feasibility {
        status = SolveStatus::MaxIterations;
    }
    Ok(SolveResult {
        x_star: xs,
        beta_star: beta,
        objective,
        residuals,
        iterations,
        outer_iterations: outer,
        status,
        history,
        multipliers: p.lam,
    })
}

/// Independent solves from `count` random starting points, seeds
/// `opts.random_seed + i`. Runs in parallel when available.
pub fn solve_restarts(program: &TranscribedProgram, opts: &SolveOptions, count: usize, exec: Exec) -> Vec<Result<SolveResult, SolveError>> {
    exec.map(count, |i| {
        let o = SolveOptions {
            random_seed: opts.random_seed.wrapping_add(i as u64),
            random_init: true,
            ..opts.clone()
        };
        solve(program, &o)
    })
}

/// Primal residuals of `result` and the norm of the projected gradient of the
/// Lagrangian (objective plus multiplier-weighted state constraints).
pub fn kkt_residuals(program: &TranscribedProgram, result: &SolveResult) -> Result<KktDiagnostics, SolveError> {
    let residuals = program.residuals(&result.x_star, &result.beta_star)?;
    let opts = SolveOptions {
        formulation: Formulation::Smoothed,
        ..SolveOptions::default()
    };
    let eng = build_engine(program, &opts);
    let mut z = vec![0.0; eng.len()];
    for k in 0..eng.k {
        let v = eng.model.from_velocity(k, &result.x_star[k], &result.beta_star[k]);
        z[eng.v_off[k]..eng.v_off[k + 1]].copy_from_slice(&v);
    }
    let mut lam = result.multipliers.clone();
    lam.resize(eng.rows_count(), 0.0);
    // With a huge penalty the multiplier term of the augmented Lagrangian is
    // the plain Lagrangian `λ c` wherever `λ > 0`.
    let p = Params {
        mu: 0.0,
        lam,
        rho: 1e-12,
        eta: Vec::new(),
        rho_dyn: 0.0,
        cone: Vec::new(),
        rho_cone: 1.0,
    };
    let mut g = vec![0.0; z.len()];
    lagrangian_gradient(&eng, &z, &p, &mut g);
    let mut w: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a - b).collect();
    eng.project(&mut w);
    let stationarity = dist2(&z, &w).sqrt();
    Ok(KktDiagnostics { residuals, stationarity })
}

/// Gradient of `objective + Σ λ_r c_r` in the reduced variables.
fn lagrangian_gradient(eng: &Engine, z: &[f64], p: &Params, g: &mut [f64]) {
    let xs = eng.simulate(z);
    let mut lam_x = vec![0.0; eng.n];
    eng.terminal.smoothed(&xs[eng.k], 0.0, 1.0, Some(&mut lam_x));
    for k in (0..eng.k).rev() {
        let x = &xs[k];
        let v = eng.v(z, k);
        let mut gx = vec![0.0; eng.n];
        let mut gv = vec![0.0; v.len()];
        eng.model.advance_adjoint(k, x, v, &lam_x, &mut gx, &mut gv);
        eng.model.stage(k, x, v, 0.0, 1.0, Some((&mut gx, &mut gv)));
        for (j, row) in eng.rows[k].iter().enumerate() {
            let li = p.lam[eng.row_start[k] + j];
            if li > 0.0 {
                row.smoothed(x, 0.0, li, Some(&mut gx));
            }
        }
        g[eng.v_off[k]..eng.v_off[k + 1]].copy_from_slice(&gv);
        lam_x = gx;
    }
}

#[cfg(test)]
mod tests;
