//! Interior-point backend on the epigraph form.
//!
//! Each max-of-norms term `w · max_i ‖A_i x + c_i‖` becomes `w · t` with
//! `t² − ‖A_i x + c_i‖² > 0`, and the control set enters through log
//! barriers of its atoms. The barrier problem is followed along the central
//! path; Newton steps keep the dynamics exact and are computed by a backward
//! Riccati sweep, so a step costs `O(K n³)`.

use super::model::AnalyticModel;
use super::terms::{AffineMap, ConvexTerm};
use super::{build_engine, seeded_rng, Formulation, SolveOptions, SolveResult, SolveStatus};
use crate::discretize::TranscribedProgram;
use crate::error::SolveError;
use crate::linalg::{dot, norm, KahanSum};
use crate::problem::Builtin;
use crate::transform::set::{arc_corner, Atom};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

const GROWTH: f64 = 10.0;
const NEWTON_TOL: f64 = 1e-10;
const MAX_CENTERING: usize = 200;

struct Cone {
    node: usize,
    weight: f64,
    maps: Vec<AffineMap>,
    /// `AᵀA` per map.
    gram: Vec<DMatrix<f64>>,
}

struct Ipm {
    n: usize,
    k: usize,
    /// Free shifted-velocity coordinates, plane by plane.
    free: Vec<usize>,
    planes: Vec<[usize; 2]>,
    atoms: Vec<Atom>,
    center: [f64; 2],
    links: Vec<(usize, usize)>,
    deltas: Vec<f64>,
    x0: Vec<f64>,
    control_cost: Option<Vec<f64>>,
    terminal_linear: Option<Vec<f64>>,
    cones: Vec<Cone>,
    scale: f64,
    /// Barrier parameter: the duality gap on the central path is `θ / τ`.
    theta: f64,
}

/// Barrier value, gradient and Hessian of one planar atom; `None` outside.
fn atom_barrier(atom: &Atom, p: [f64; 2]) -> Option<(f64, [f64; 2], [[f64; 2]; 2])> {
    // Slack s > 0, its gradient and Hessian.
    let (s, ds, hs): (f64, [f64; 2], [[f64; 2]; 2]) = match atom {
        Atom::Affine { w, r } => (r - w[0] * p[0] - w[1] * p[1], [-w[0], -w[1]], [[0.0; 2]; 2]),
        Atom::NormBall { center, radius, .. } => {
            let d = [p[0] - center[0], p[1] - center[1]];
            (
                radius * radius - d[0] * d[0] - d[1] * d[1],
                [-2.0 * d[0], -2.0 * d[1]],
                [[-2.0, 0.0], [0.0, -2.0]],
            )
        }
        Atom::ArcEpigraph {
            along,
            across,
            sign,
            radius,
            half_angle,
        } => {
            let (x, y) = (sign * p[*along], p[*across]);
            let mut ds = [0.0; 2];
            let mut hs = [[0.0; 2]; 2];
            ds[*along] = -sign;
            let s = match arc_corner(*radius, *half_angle) {
                Some((x0, y0, slope)) if y.abs() > y0 => {
                    ds[*across] = -slope * y.signum();
                    x0 - slope * (y.abs() - y0) - x
                }
                _ if y.abs() < *radius => {
                    let q = (radius * radius - y * y).sqrt();
                    ds[*across] = -y / q;
                    hs[*across][*across] = -radius * radius / (q * q * q);
                    q - x
                }
                _ => return None,
            };
            (s, ds, hs)
        }
    };
    if !(s > 0.0) {
        return None;
    }
    let g = [-ds[0] / s, -ds[1] / s];
    let mut h = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            h[i][j] = ds[i] * ds[j] / (s * s) - hs[i][j] / s;
        }
    }
    Some((-s.ln(), g, h))
}

/// Search direction and the data needed to evaluate it.
struct Step {
    du: Vec<f64>,
    dt: Vec<f64>,
    /// Directional derivative of the centering objective along the step.
    slope: f64,
}

impl Ipm {
    fn new(program: &TranscribedProgram, b: &Builtin, opts: &SolveOptions) -> Self {
        let model = AnalyticModel::new(b, program);
        let k = program.steps();
        let n = model.geom.n;
        let mut cones = Vec::new();
        let mut push = |node: usize, weight: f64, maps: &[AffineMap]| {
            let gram = maps.iter().map(|m| m.a.transpose() * &m.a).collect();
            cones.push(Cone {
                node,
                weight,
                maps: maps.to_vec(),
                gram,
            });
        };
        for (i, term) in model.state_cost.iter().enumerate() {
            if let ConvexTerm::MaxOfNorms(maps) = term {
                push(i, model.deltas[i], maps);
            }
        }
        let terminal = super::terminal_term(program);
        let terminal_linear = match &terminal {
            ConvexTerm::MaxOfNorms(maps) => {
                push(k, 1.0, maps);
                None
            }
            ConvexTerm::Linear { w, .. } => Some(w.clone()),
            _ => None,
        };
        let geom = &model.geom;
        let atoms = geom.region.atoms.clone();
        let theta = (k * geom.planes.len() * atoms.len()) as f64
            + 2.0 * cones.iter().map(|c| c.maps.len()).sum::<usize>() as f64;
        Self {
            n,
            k,
            free: geom.planes.iter().flat_map(|p| p.iter().copied()).collect(),
            planes: geom.planes.clone(),
            atoms,
            center: geom.region.interior_point(),
            links: geom.links.clone(),
            deltas: model.deltas.clone(),
            x0: program.spec.initial_state.clone(),
            control_cost: model.control_cost.clone(),
            terminal_linear,
            cones,
            scale: opts.objective_scale,
            theta,
        }
    }

    fn a_matrix(&self, k: usize) -> DMatrix<f64> {
        let mut a = DMatrix::identity(self.n, self.n);
        for &(i, j) in &self.links {
            a[(i, j)] += self.deltas[k];
        }
        a
    }

    fn simulate(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut xs = vec![0.0; (self.k + 1) * n];
        xs[..n].copy_from_slice(&self.x0);
        for k in 0..self.k {
            let dt = self.deltas[k];
            for i in 0..n {
                xs[(k + 1) * n + i] = xs[k * n + i] - dt * u[k * n + i];
            }
            for &(i, j) in &self.links {
                xs[(k + 1) * n + i] += dt * xs[k * n + j];
            }
        }
        xs
    }

    /// Scaled linear objective of the epigraph form.
    fn objective(&self, u: &[f64], t: &[f64], xs: &[f64]) -> f64 {
        let mut acc = KahanSum::new(0.0);
        for (c, tj) in self.cones.iter().zip(t) {
            acc.add(c.weight * tj);
        }
        if let Some(c) = &self.control_cost {
            for k in 0..self.k {
                acc.add(self.deltas[k] * dot(c, &u[k * self.n..(k + 1) * self.n]));
            }
        }
        if let Some(w) = &self.terminal_linear {
            acc.add(dot(w, &xs[self.k * self.n..]));
        }
        self.scale * acc.value()
    }

    /// `τ F + Φ`, or `None` outside the barrier domain.
    fn merit(&self, u: &[f64], t: &[f64], tau: f64) -> Option<f64> {
        let n = self.n;
        let xs = self.simulate(u);
        let mut val = tau * self.objective(u, t, &xs);
        for k in 0..self.k {
            for pl in &self.planes {
                let p = [u[k * n + pl[0]], u[k * n + pl[1]]];
                for a in &self.atoms {
                    val += atom_barrier(a, p)?.0;
                }
            }
        }
        let mut w = Vec::new();
        for (c, &tj) in self.cones.iter().zip(t) {
            if !(tj > 0.0) {
                return None;
            }
            for m in &c.maps {
                w.resize(m.rows(), 0.0);
                m.apply_into(&xs[c.node * n..(c.node + 1) * n], &mut w);
                let s = tj * tj - dot(&w, &w);
                if !(s > 0.0) {
                    return None;
                }
                val -= s.ln();
            }
        }
        Some(val)
    }

    fn newton(&self, u: &[f64], t: &[f64], tau: f64) -> Result<Step, SolveError> {
        let (n, kk, m) = (self.n, self.k, self.free.len());
        let xs = self.simulate(u);
        let ts = tau * self.scale;

        // Node blocks after eliminating the epigraph variables.
        let mut q_mat: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n); kk + 1];
        let mut q_vec: Vec<DVector<f64>> = vec![DVector::zeros(n); kk + 1];
        let mut gx_full: Vec<DVector<f64>> = vec![DVector::zeros(n); kk + 1];
        if let Some(w) = &self.terminal_linear {
            for i in 0..n {
                q_vec[kk][i] += ts * w[i];
                gx_full[kk][i] += ts * w[i];
            }
        }
        // Per cone: (H_xt, H_tt, g_t).
        let mut elim = Vec::with_capacity(self.cones.len());
        let mut w = Vec::new();
        for (c, &tj) in self.cones.iter().zip(t) {
            let x = &xs[c.node * n..(c.node + 1) * n];
            let mut hxx = DMatrix::zeros(n, n);
            let mut hxt = DVector::zeros(n);
            let mut gx = DVector::zeros(n);
            let mut htt = 0.0;
            let mut gt = ts * c.weight;
            for (mp, gram) in c.maps.iter().zip(&c.gram) {
                w.resize(mp.rows(), 0.0);
                mp.apply_into(x, &mut w);
                let s = tj * tj - dot(&w, &w);
                let mut atw = DVector::zeros(n);
                mp.adjoint_acc(&w, 1.0, atw.as_mut_slice());
                gx += &atw * (2.0 / s);
                gt -= 2.0 * tj / s;
                hxx += gram * (2.0 / s);
                hxx.ger(4.0 / (s * s), &atw, &atw, 1.0);
                hxt -= &atw * (4.0 * tj / (s * s));
                htt += -2.0 / s + 4.0 * tj * tj / (s * s);
            }
            let node = c.node;
            gx_full[node] += &gx;
            q_mat[node] += &hxx;
            q_mat[node].ger(-1.0 / htt, &hxt, &hxt, 1.0);
            q_vec[node] += &gx - &hxt * (gt / htt);
            elim.push((hxt, htt, gt));
        }

        // Step blocks on the free velocity coordinates.
        let mut r_mat: Vec<DMatrix<f64>> = Vec::with_capacity(kk);
        let mut r_vec: Vec<DVector<f64>> = Vec::with_capacity(kk);
        for k in 0..kk {
            let mut rm = DMatrix::zeros(m, m);
            let mut rv = DVector::zeros(m);
            for (pi, pl) in self.planes.iter().enumerate() {
                let p = [u[k * n + pl[0]], u[k * n + pl[1]]];
                for a in &self.atoms {
                    let (_, g, h) = atom_barrier(a, p).ok_or_else(|| SolveError::BadOptions("iterate left the barrier domain".into()))?;
                    for i in 0..2 {
                        rv[2 * pi + i] += g[i];
                        for j in 0..2 {
                            rm[(2 * pi + i, 2 * pi + j)] += h[i][j];
                        }
                    }
                }
            }
            if let Some(c) = &self.control_cost {
                for (fi, &coord) in self.free.iter().enumerate() {
                    rv[fi] += ts * self.deltas[k] * c[coord];
                }
            }
            r_mat.push(rm);
            r_vec.push(rv);
        }

        // Backward sweep.
        let mut p_mat = q_mat[kk].clone();
        let mut p_vec = q_vec[kk].clone();
        let mut gains = vec![(DMatrix::zeros(m, n), DVector::zeros(m)); kk];
        for k in (0..kk).rev() {
            let dt = self.deltas[k];
            let a = self.a_matrix(k);
            let pa = &p_mat * &a;
            let mut g_mat = r_mat[k].clone();
            let mut f_mat = DMatrix::zeros(m, n);
            let mut g_vec = r_vec[k].clone();
            for (fi, &ci) in self.free.iter().enumerate() {
                for (fj, &cj) in self.free.iter().enumerate() {
                    g_mat[(fi, fj)] += dt * dt * p_mat[(ci, cj)];
                }
                for j in 0..n {
                    f_mat[(fi, j)] = -dt * pa[(ci, j)];
                }
                g_vec[fi] -= dt * p_vec[ci];
            }
            let chol = g_mat
                .cholesky()
                .ok_or_else(|| SolveError::BadOptions("Newton system lost definiteness".into()))?;
            let gain = -chol.solve(&f_mat);
            let ff = -chol.solve(&g_vec);
            if k >= 1 {
                let mut next = &q_mat[k] + a.transpose() * &pa + f_mat.transpose() * &gain;
                next = (&next + next.transpose()) * 0.5;
                p_vec = &q_vec[k] + a.transpose() * &p_vec + f_mat.transpose() * &ff;
                p_mat = next;
            }
            gains[k] = (gain, ff);
        }

        // Forward pass.
        let mut du = vec![0.0; kk * n];
        let mut dx = DVector::zeros(n);
        let mut slope = 0.0;
        let mut dxs = vec![DVector::zeros(n); kk + 1];
        for k in 0..kk {
            let (gain, ff) = &gains[k];
            let duk = gain * &dx + ff;
            slope += r_vec[k].dot(&duk);
            let dt = self.deltas[k];
            let mut next = self.a_matrix(k) * &dx;
            for (fi, &ci) in self.free.iter().enumerate() {
                du[k * n + ci] = duk[fi];
                next[ci] -= dt * duk[fi];
            }
            dx = next;
            dxs[k + 1] = dx.clone();
            slope += gx_full[k + 1].dot(&dx);
        }
        let mut dtv = Vec::with_capacity(self.cones.len());
        for (c, (hxt, htt, gt)) in self.cones.iter().zip(&elim) {
            let d = -(gt + hxt.dot(&dxs[c.node])) / htt;
            slope += gt * d;
            dtv.push(d);
        }
        Ok(Step { du, dt: dtv, slope })
    }

    /// Strictly interior start: controls pulled toward the region's centre,
    /// epigraph variables above the norms.
    fn start(&self, opts: &SolveOptions) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mut rng = seeded_rng(opts.random_seed);
        let geom_project = |p: [f64; 2]| -> [f64; 2] {
            // Pull toward the centre so every atom is strictly slack.
            let mut q = p;
            for _ in 0..60 {
                if self.atoms.iter().all(|a| a.value(&q) < 0.0) {
                    break;
                }
                q = [0.5 * (q[0] + self.center[0]), 0.5 * (q[1] + self.center[1])];
            }
            q
        };
        let mut u = vec![0.0; self.k * n];
        for k in 0..self.k {
            for pl in &self.planes {
                let p = if opts.random_init {
                    [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]
                } else {
                    self.center
                };
                let q = geom_project(p);
                u[k * n + pl[0]] = q[0];
                u[k * n + pl[1]] = q[1];
            }
        }
        let xs = self.simulate(&u);
        let t = self
            .cones
            .iter()
            .map(|c| {
                let x = &xs[c.node * n..(c.node + 1) * n];
                let worst = c.maps.iter().map(|m| norm(&m.apply(x))).fold(0.0, f64::max);
                1.1 * worst + 0.1
            })
            .collect();
        (u, t)
    }
}

/// Interior-point solve of a built-in without state constraints.
pub(super) fn solve(program: &TranscribedProgram, opts: &SolveOptions) -> Result<SolveResult, SolveError> {
    let spec = &program.spec;
    let b = match (&spec.builtin, &spec.state_constraint) {
        (Some(b), None) => b,
        _ => {
            return Err(SolveError::BadOptions(
                "the interior-point backend handles built-in problems without state constraints".into(),
            ))
        }
    };
    let ipm = Ipm::new(program, b, opts);
    let (mut u, mut t) = ipm.start(opts);
    let xs = ipm.simulate(&u);
    let f0 = ipm.objective(&u, &t, &xs);
    let mut tau = ipm.theta / f0.abs().max(1.0);
    let mut iterations = 0;
    let mut history = Vec::new();
    let mut status = SolveStatus::MaxIterations;
    let mut outer = 0;
    let eng = build_engine(
        program,
        &SolveOptions {
            formulation: Formulation::Smoothed,
            ..opts.clone()
        },
    );

    'outer: loop {
        outer += 1;
        let mut centred = false;
        for _ in 0..MAX_CENTERING {
            if iterations >= opts.max_iterations {
                break 'outer;
            }
            iterations += 1;
            let step = ipm.newton(&u, &t, tau)?;
            let decrement = -step.slope;
            if decrement <= 2.0 * NEWTON_TOL {
                centred = true;
                break;
            }
            let f = ipm.merit(&u, &t, tau).ok_or_else(|| SolveError::BadOptions("iterate left the barrier domain".into()))?;
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-14 {
                let u2: Vec<f64> = u.iter().zip(&step.du).map(|(a, d)| a + alpha * d).collect();
                let t2: Vec<f64> = t.iter().zip(&step.dt).map(|(a, d)| a + alpha * d).collect();
                if let Some(f2) = ipm.merit(&u2, &t2, tau) {
                    if f2 <= f + 0.25 * alpha * step.slope {
                        u = u2;
                        t = t2;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                // No progress at working precision: treat as centred.
                centred = true;
                break;
            }
        }
        let (obj, _, _) = eng.true_objective(&u);
        history.push(obj);
        let xs = ipm.simulate(&u);
        let model_obj = ipm.objective(&u, &t, &xs);
        let gap = ipm.theta / tau;
        if centred && gap <= 0.5 * opts.tol_objective * (1.0 + model_obj.abs()) {
            status = SolveStatus::Converged;
            break;
        }
        tau *= GROWTH;
    }

    let (objective, _, xs) = eng.true_objective(&u);
    let beta: Vec<Vec<f64>> = (0..ipm.k).map(|k| eng.model.velocity(k, &xs[k], eng.v(&u, k))).collect();
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
        multipliers: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atom_barriers_match_differences() {
        let atoms = [
            Atom::Affine {
                w: vec![1.0, 2.0],
                r: 3.0,
            },
            Atom::NormBall {
                coords: vec![0, 1],
                center: vec![0.1, -0.2],
                radius: 2.0,
            },
            Atom::ArcEpigraph {
                along: 0,
                across: 1,
                sign: -1.0,
                radius: 3.0,
                half_angle: 0.5,
            },
        ];
        for a in &atoms {
            for p in [[0.3, 0.4], [-0.5, 1.6], [0.2, -0.1]] {
                let (_, g, h) = atom_barrier(a, p).unwrap();
                for i in 0..2 {
                    let e = 1e-6;
                    let mut up = p;
                    up[i] += e;
                    let mut dn = p;
                    dn[i] -= e;
                    let (fu, gu, _) = atom_barrier(a, up).unwrap();
                    let (fd, gd, _) = atom_barrier(a, dn).unwrap();
                    assert!(((fu - fd) / (2.0 * e) - g[i]).abs() < 1e-6, "{a:?} {p:?}");
                    for j in 0..2 {
                        assert!(((gu[j] - gd[j]) / (2.0 * e) - h[i][j]).abs() < 1e-5, "{a:?} {p:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn outside_is_rejected() {
        let a = Atom::Affine {
            w: vec![1.0, 0.0],
            r: 0.0,
        };
        assert!(atom_barrier(&a, [0.5, 0.0]).is_none());
    }
}
