//! Convex scalar terms of the state with smoothed gradients.

use crate::linalg::{dot, norm};
use nalgebra::DMatrix;
use std::fmt;
use std::sync::Arc;

/// `x ↦ A x + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    pub a: DMatrix<f64>,
    pub c: Vec<f64>,
}

impl AffineMap {
    pub fn rows(&self) -> usize {
        self.c.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows()];
        self.apply_into(x, &mut out);
        out
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.c);
        let rows = self.rows();
        for (col, xj) in self.a.as_slice().chunks_exact(rows).zip(x) {
            if *xj != 0.0 {
                for (o, aij) in out.iter_mut().zip(col) {
                    *o += aij * xj;
                }
            }
        }
    }

    /// `g += alpha · Aᵀ w`
    pub fn adjoint_acc(&self, w: &[f64], alpha: f64, g: &mut [f64]) {
        let rows = self.rows();
        for (col, gj) in self.a.as_slice().chunks_exact(rows).zip(g.iter_mut()) {
            *gj += alpha * dot(col, w);
        }
    }

    /// Recovers an affine map from its values (exact for affine `f`).
    pub fn from_fn(n: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let zero = vec![0.0; n];
        let c = f(&zero);
        let mut a = DMatrix::zeros(c.len(), n);
        let mut e = zero;
        for j in 0..n {
            e[j] = 1.0;
            let v = f(&e);
            for i in 0..c.len() {
                a[(i, j)] = v[i] - c[i];
            }
            e[j] = 0.0;
        }
        Self { a, c }
    }
}

/// A convex function of the state.
#[derive(Clone)]
pub enum ConvexTerm {
    Zero,
    /// `w · x + r`
    Linear { w: Vec<f64>, r: f64 },
    /// `max_i ‖A_i x + c_i‖₂`
    MaxOfNorms(Vec<AffineMap>),
    /// Opaque evaluator; gradients by central differences.
    Opaque(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for ConvexTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Linear { w, r } => write!(f, "Linear({w:?}, {r})"),
            Self::MaxOfNorms(m) => write!(f, "MaxOfNorms({} maps)", m.len()),
            Self::Opaque(_) => write!(f, "Opaque"),
        }
    }
}

/// Projection of `(w, s)` onto the second-order cone `‖w‖ ≤ s`, in place.
pub fn project_soc(w: &mut [f64], s: &mut f64) {
    let nw = norm(w);
    if nw <= *s {
        return;
    }
    if nw <= -*s {
        w.fill(0.0);
        *s = 0.0;
        return;
    }
    let a = 0.5 * (nw + *s);
    for v in w.iter_mut() {
        *v *= a / nw;
    }
    *s = a;
}

/// Projection of `v` onto `{r ≥ 0, Σ r ≤ 1}`.
fn project_capped_simplex(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = x.max(0.0);
    }
    if v.iter().sum::<f64>() > 1.0 {
        crate::transform::set::project_simplex(v);
    }
}

impl ConvexTerm {
    pub fn is_zero(&self) -> bool {
        matches!(self, ConvexTerm::Zero)
    }

    /// Exact value.
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ConvexTerm::Zero => 0.0,
            ConvexTerm::Linear { w, r } => dot(w, x) + r,
            ConvexTerm::MaxOfNorms(maps) => maps.iter().map(|m| norm(&m.apply(x))).fold(0.0, f64::max),
            ConvexTerm::Opaque(f) => f(x),
        }
    }

    /// Value of the `μ`-smoothed term, adding `scale ·` its gradient to `grad`.
    ///
    /// Norms are smoothed as `max_{‖y‖ ≤ 1} ⟨y, w⟩ − μ‖y‖²/2`, jointly over
    /// the maps, so the smoothed value undershoots by at most `μ/2`. With
    /// `μ = 0` the returned gradient is a subgradient.
    pub fn smoothed(&self, x: &[f64], mu: f64, scale: f64, grad: Option<&mut [f64]>) -> f64 {
        match self {
            ConvexTerm::Zero => 0.0,
            ConvexTerm::Linear { w, r } => {
                if let Some(g) = grad {
                    crate::linalg::axpy(scale, w, g);
                }
                dot(w, x) + r
            }
            ConvexTerm::MaxOfNorms(maps) => {
                let ws: Vec<Vec<f64>> = maps.iter().map(|m| m.apply(x)).collect();
                let norms: Vec<f64> = ws.iter().map(|w| norm(w)).collect();
                if norms.len() == 1 && mu == 0.0 {
                    if let Some(g) = grad {
                        if norms[0] > 0.0 {
                            maps[0].adjoint_acc(&ws[0], scale / norms[0], g);
                        }
                    }
                    return norms[0];
                }
                let (weights, value) = if mu > 0.0 {
                    let mut r: Vec<f64> = norms.iter().map(|v| v / mu).collect();
                    project_capped_simplex(&mut r);
                    let v = r.iter().zip(&norms).map(|(ri, ni)| ri * ni).sum::<f64>()
                        - 0.5 * mu * r.iter().map(|ri| ri * ri).sum::<f64>();
                    (r, v)
                } else {
                    let mut r = vec![0.0; maps.len()];
                    let mut best = 0;
                    for (i, v) in norms.iter().enumerate() {
                        if *v > norms[best] {
                            best = i;
                        }
                    }
                    if norms[best] > 0.0 {
                        r[best] = 1.0;
                    }
                    (r, norms[best])
                };
                if let Some(g) = grad {
                    for ((m, w), (ri, ni)) in maps.iter().zip(&ws).zip(weights.iter().zip(&norms)) {
                        if *ri != 0.0 && *ni != 0.0 {
                            m.adjoint_acc(w, scale * ri / ni, g);
                        }
                    }
                }
                value
            }
            ConvexTerm::Opaque(f) => {
                let v = f(x);
                if let Some(g) = grad {
                    let mut y = x.to_vec();
                    for j in 0..x.len() {
                        let h = 1e-6 * (1.0 + x[j].abs());
                        y[j] = x[j] + h;
                        let up = f(&y);
                        y[j] = x[j] - h;
                        let dn = f(&y);
                        y[j] = x[j];
                        g[j] += scale * (up - dn) / (2.0 * h);
                    }
                }
                v
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm_term() -> ConvexTerm {
        ConvexTerm::MaxOfNorms(vec![AffineMap::from_fn(2, |x| x.to_vec())])
    }

    #[test]
    fn smoothing_error_bounded() {
        let t = norm_term();
        for x in [[0.0, 0.0], [1e-4, 0.0], [3.0, 4.0]] {
            let exact = t.value(&x);
            let s = t.smoothed(&x, 1e-2, 1.0, None);
            assert!(s <= exact + 1e-15 && exact - s <= 0.5e-2 + 1e-15);
        }
    }

    #[test]
    fn gradient_matches_differences() {
        let maps = vec![
            AffineMap::from_fn(3, |x| vec![x[0] - 1.0, 2.0 * x[1]]),
            AffineMap::from_fn(3, |x| vec![x[2] + x[0], 0.5]),
        ];
        let t = ConvexTerm::MaxOfNorms(maps);
        let x = [0.3, -0.2, 0.7];
        let mu = 0.05;
        let mut g = vec![0.0; 3];
        t.smoothed(&x, mu, 1.0, Some(&mut g));
        for j in 0..3 {
            let mut y = x;
            y[j] += 1e-6;
            let up = t.smoothed(&y, mu, 1.0, None);
            y[j] -= 2e-6;
            let dn = t.smoothed(&y, mu, 1.0, None);
            assert!((g[j] - (up - dn) / 2e-6).abs() < 1e-6, "{j}: {g:?}");
        }
    }

    #[test]
    fn unsmoothed_is_subgradient() {
        let t = norm_term();
        let mut g = vec![0.0; 2];
        let v = t.smoothed(&[3.0, 4.0], 0.0, 2.0, Some(&mut g));
        assert_eq!(v, 5.0);
        assert!((g[0] - 1.2).abs() < 1e-15 && (g[1] - 1.6).abs() < 1e-15);
    }

    #[test]
    fn soc_projection_cases() {
        let mut w = [3.0, 4.0];
        let mut s = 5.0;
        project_soc(&mut w, &mut s);
        assert_eq!((w, s), ([3.0, 4.0], 5.0));
        let mut s = -6.0;
        project_soc(&mut w, &mut s);
        assert_eq!((w, s), ([0.0, 0.0], 0.0));
        let mut w = [3.0, 4.0];
        let mut s = 1.0;
        project_soc(&mut w, &mut s);
        assert!((s - 3.0).abs() < 1e-15 && (norm(&w) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn adjoint_matches_dense_transpose() {
        let m = AffineMap::from_fn(3, |x| vec![x[0] - 2.0 * x[2], 3.0 * x[1] + 1.0]);
        let mut g = vec![0.0; 3];
        m.adjoint_acc(&[1.0, 2.0], 0.5, &mut g);
        assert_eq!(g, vec![0.5, 3.0, -1.0]);
    }

    #[test]
    fn affine_map_recovery() {
        let m = AffineMap::from_fn(2, |x| vec![2.0 * x[0] - x[1] + 1.0]);
        assert_eq!(m.apply(&[1.0, 1.0]), vec![2.0]);
    }
}
