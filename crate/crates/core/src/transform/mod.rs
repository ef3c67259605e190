//! Velocity-control transform: Hamiltonian, `L^b`, the conjugate stage cost
//! `H*` and the convexified control set `Conv(B(s, x))`.

pub(crate) mod analytic;
mod convexity;
pub mod set;

pub use analytic::gear_hstar_coefficients;
pub use convexity::{check_convexity_conditions, CheckStatus, ConditionItem, ConvexityReport};
pub use set::{Atom, ConvexControlSet, Equality, GeneratorBlock, GeneratorSample};

use crate::error::TransformError;
use crate::linalg::{dot, norm};
use crate::problem::ProblemSpec;
use serde::{Serialize, Serializer};
use std::fmt;

/// Absolute tolerance for "b ∈ Conv(B)".
pub const FEAS_TOL: f64 = 1e-6;

/// A real number or `+∞`; `+∞` only where infeasibility is certified.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    PosInfinity,
}

impl ExtendedReal {
    pub fn is_finite(&self) -> bool {
        matches!(self, ExtendedReal::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(v) => Some(*v),
            ExtendedReal::PosInfinity => None,
        }
    }

    /// `f64` view with `+∞` mapped to `f64::INFINITY`.
    pub fn to_f64(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedReal::Finite(v) => write!(f, "{v}"),
            ExtendedReal::PosInfinity => write!(f, "+inf"),
        }
    }
}

impl Serialize for ExtendedReal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ExtendedReal::Finite(v) => s.serialize_f64(*v),
            ExtendedReal::PosInfinity => s.serialize_str("+inf"),
        }
    }
}

/// `H(s, x, p) = max_a −p·f(s, x, a) − L(s, x, a)` and a maximiser.
///
/// Built-ins use their closed form; other problems maximise over the default
/// control sample.
pub fn hamiltonian(spec: &ProblemSpec, s: f64, x: &[f64], p: &[f64]) -> Result<(f64, Vec<f64>), TransformError> {
    if let Some(b) = &spec.builtin {
        return Ok(analytic::hamiltonian(b, s, x, p));
    }
    hamiltonian_sampled(spec, s, x, p)
}

/// Sampled Hamiltonian: maximum over the default control sample.
pub fn hamiltonian_sampled(
    spec: &ProblemSpec,
    s: f64,
    x: &[f64],
    p: &[f64],
) -> Result<(f64, Vec<f64>), TransformError> {
    let sample = spec.control_sample();
    let mut best: Option<(f64, &Vec<f64>)> = None;
    for a in sample {
        let v = -dot(p, &spec.f(s, x, a)) - spec.stage(s, x, a);
        if best.is_none_or(|(bv, _)| v > bv) {
            best = Some((v, a));
        }
    }
    best.map(|(v, a)| (v, a.clone())).ok_or(TransformError::EmptySample)
}

/// `L^b(s, x, b) = min { L(s, x, a) : ‖f(s, x, a) + b‖ ≤ tol }` over the
/// control sample; `+∞` when no sampled control reaches `b`.
pub fn lb_cost(spec: &ProblemSpec, s: f64, x: &[f64], b: &[f64], tol: f64) -> ExtendedReal {
    let mut best = f64::INFINITY;
    for a in spec.control_sample() {
        let f = spec.f(s, x, a);
        let miss = f.iter().zip(b).map(|(fi, bi)| (fi + bi) * (fi + bi)).sum::<f64>().sqrt();
        if miss <= tol {
            best = best.min(spec.stage(s, x, a));
        }
    }
    if best.is_finite() {
        ExtendedReal::Finite(best)
    } else {
        ExtendedReal::PosInfinity
    }
}

/// Generators `{−f(s, x, a_j)}` with costs `L(s, x, a_j)`.
///
/// The formation built-in returns one block per agent with densely sampled
/// sector arcs instead of the (sparse) product sample.
pub fn generator_sample(spec: &ProblemSpec, s: f64, x: &[f64]) -> GeneratorSample {
    if let Some(crate::problem::Builtin::Formation12d(p)) = &spec.builtin {
        return analytic::formation_generators(p, s, x);
    }
    let sample = spec.control_sample();
    let mut points = Vec::with_capacity(sample.len());
    let mut costs = Vec::with_capacity(sample.len());
    for a in sample {
        points.push(spec.f(s, x, a).iter().map(|v| -v).collect());
        costs.push(spec.stage(s, x, a));
    }
    GeneratorSample {
        base_cost: 0.0,
        blocks: vec![GeneratorBlock {
            coords: (0..spec.state_dim).collect(),
            control_coords: (0..spec.control_dim).collect(),
            points,
            costs,
            controls: sample.to_vec(),
        }],
    }
}

/// `H*(s, x, b)`.
///
/// Dispatch: closed form for built-ins; `Lx + conj(b + M x)` through the
/// control-part LP when a structured form exists; otherwise the generic LP
/// over the generator sample.
pub fn hstar(spec: &ProblemSpec, s: f64, x: &[f64], b: &[f64]) -> Result<ExtendedReal, TransformError> {
    if let Some(bi) = &spec.builtin {
        return Ok(analytic::hstar(bi, s, x, b, FEAS_TOL));
    }
    if spec.structured.is_some() {
        return hstar_structured(spec, s, x, b);
    }
    hstar_lp(spec, s, x, b)
}

/// Structured path: `Lx(s, x)` plus the convexified conjugate of the control
/// part at `b + M(s) x`, computed by LP over `{−φ(s, a_j)}` with costs
/// `La(s, a_j)`.
pub fn hstar_structured(spec: &ProblemSpec, s: f64, x: &[f64], b: &[f64]) -> Result<ExtendedReal, TransformError> {
    let sf = spec.structured.as_ref().ok_or(TransformError::NoRepresentation)?;
    let m = (sf.m)(s);
    let mut u = vec![0.0; spec.state_dim];
    crate::linalg::mat_vec(&m, x, &mut u);
    for (ui, bi) in u.iter_mut().zip(b) {
        *ui += bi;
    }
    let sample = spec.control_sample();
    if sample.is_empty() {
        return Err(TransformError::EmptySample);
    }
    let mut points = Vec::with_capacity(sample.len());
    let mut costs = Vec::with_capacity(sample.len());
    let mut buf = vec![0.0; spec.state_dim];
    for a in sample {
        (sf.phi)(s, a, &mut buf);
        points.push(buf.iter().map(|v| -v).collect());
        costs.push((sf.la)(s, a));
    }
    match crate::lp::min_cost_combination(&points, &costs, &u, FEAS_TOL)? {
        crate::lp::HullLp::Optimal(c) => Ok(ExtendedReal::Finite((sf.lx)(s, x) + c.cost)),
        crate::lp::HullLp::Infeasible { .. } => Ok(ExtendedReal::PosInfinity),
    }
}

/// Generic path: `min Σ γ_j L_j` subject to `Σ γ_j b_j = b`, `γ` in the
/// simplex, over the generator sample. `+∞` iff the LP is infeasible.
pub fn hstar_lp(spec: &ProblemSpec, s: f64, x: &[f64], b: &[f64]) -> Result<ExtendedReal, TransformError> {
    let gens = generator_sample(spec, s, x);
    if gens.is_empty() {
        return Err(TransformError::EmptySample);
    }
    Ok(match gens.min_cost(b, FEAS_TOL)? {
        Some(parts) => ExtendedReal::Finite(gens.base_cost + parts.iter().map(|c| c.cost).sum::<f64>()),
        None => ExtendedReal::PosInfinity,
    })
}

/// `Conv(B(s, x))`: closed-form atoms for built-ins, generator sample always.
pub fn conv_control_set(spec: &ProblemSpec, s: f64, x: &[f64]) -> ConvexControlSet {
    let mut set = match &spec.builtin {
        Some(b) => analytic::geometry(b).control_set(x),
        None => ConvexControlSet {
            dim: spec.state_dim,
            ..Default::default()
        },
    };
    set.generators = Some(generator_sample(spec, s, x));
    set
}

/// Membership residual of `b` in `Conv(B(s, x))`: closed form for built-ins,
/// hull LP otherwise.
pub fn membership_residual(spec: &ProblemSpec, s: f64, x: &[f64], b: &[f64]) -> Result<f64, TransformError> {
    if let Some(bi) = &spec.builtin {
        let g = analytic::geometry(bi);
        return Ok(g.residual_u(&g.shift(x, b)));
    }
    conv_control_set(spec, s, x).residual(b)
}

/// Projection onto a convex control set; see [`ConvexControlSet::project`].
pub fn project(set: &ConvexControlSet, b: &[f64], tol: f64) -> Result<Vec<f64>, TransformError> {
    set.project(b, tol)
}

/// Largest `‖f(s, x, a)‖` over the control sample.
pub fn max_speed(spec: &ProblemSpec, s: f64, x: &[f64]) -> f64 {
    spec.control_sample()
        .iter()
        .map(|a| norm(&spec.f(s, x, a)))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::make_builtin;
    use serde_json::Map;

    fn vehicle() -> ProblemSpec {
        make_builtin("vehicle2d", &Map::new()).unwrap()
    }

    fn gear() -> ProblemSpec {
        make_builtin("gear4d", &Map::new()).unwrap()
    }

    #[test]
    fn vehicle_hamiltonian_is_norm() {
        let (v, a) = hamiltonian(&vehicle(), 0.0, &[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert_eq!(v, 5.0);
        // The maximiser points against p.
        assert!((a[0].cos() + 0.6).abs() < 1e-12 && (a[0].sin() + 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_costate_gives_minus_min_cost() {
        for spec in [vehicle(), gear()] {
            let x = vec![0.0; spec.state_dim];
            let p = vec![0.0; spec.state_dim];
            let (v, _) = hamiltonian(&spec, 0.0, &x, &p).unwrap();
            let min_l = spec
                .control_sample()
                .iter()
                .map(|a| spec.stage(0.0, &x, a))
                .fold(f64::INFINITY, f64::min);
            assert!((v + min_l).abs() < 1e-15);
        }
    }

    #[test]
    fn gear_hamiltonian_at_rest() {
        let (v, _) = hamiltonian(&gear(), 0.0, &[0.0; 4], &[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(v, 0.0);
        let (vs, _) = hamiltonian_sampled(&gear(), 0.0, &[0.0; 4], &[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(vs, 0.0);
    }

    #[test]
    fn lb_cost_examples() {
        let v = vehicle();
        assert_eq!(lb_cost(&v, 0.0, &[0.0, 0.0], &[-1.0, 0.0], 1e-6), ExtendedReal::Finite(0.0));
        assert_eq!(lb_cost(&v, 0.0, &[0.0, 0.0], &[0.0, 0.0], 1e-6), ExtendedReal::PosInfinity);
        let g = gear();
        let b = [0.0, -0.25, 0.0, 0.25];
        assert_eq!(lb_cost(&g, 0.0, &[0.0; 4], &b, 1e-6), ExtendedReal::Finite(1.0));
    }

    #[test]
    fn hstar_examples() {
        let v = vehicle();
        assert_eq!(hstar(&v, 0.0, &[0.0, 0.0], &[0.6, 0.8]).unwrap(), ExtendedReal::Finite(0.0));
        assert_eq!(hstar(&v, 0.0, &[0.0, 0.0], &[2.0, 0.0]).unwrap(), ExtendedReal::PosInfinity);
        let g = gear();
        let h = hstar(&g, 0.0, &[0.0; 4], &[0.0, -0.1, 0.0, 0.15]).unwrap();
        assert!((h.to_f64() - 0.85).abs() < 1e-12);
        let h_lp = hstar_lp(&g, 0.0, &[0.0; 4], &[0.0, -0.1, 0.0, 0.15]).unwrap();
        assert!((h_lp.to_f64() - 0.85).abs() < 1e-9, "{h_lp}");
        let h_st = hstar_structured(&g, 0.0, &[0.0; 4], &[0.0, -0.1, 0.0, 0.15]).unwrap();
        assert!((h_st.to_f64() - 0.85).abs() < 1e-9);
    }

    #[test]
    fn control_set_shapes() {
        let v = conv_control_set(&vehicle(), 0.0, &[0.0, 0.0]);
        assert_eq!(v.atoms.len(), 1);
        assert!(v.equalities.is_empty());
        assert!(matches!(v.atoms[0], Atom::NormBall { radius, .. } if radius == 1.0));

        let x = [0.0, 0.05, 0.0, -0.02];
        let g = conv_control_set(&gear(), 0.0, &x);
        assert_eq!(g.equalities.len(), 2);
        assert_eq!(g.equalities[0].r, -0.05);
        assert_eq!(g.equalities[1].r, 0.02);
        assert_eq!(g.atoms.len(), 3);
        let want = [(vec![0.0, -1.0, 0.0, -1.0], 0.0), (vec![0.0, 2.0, 0.0, 1.0], 0.0), (vec![0.0, 5.0, 0.0, 9.0], 1.0)];
        for (a, (w, r)) in g.atoms.iter().zip(want) {
            assert_eq!(a, &Atom::Affine { w, r });
        }

        let f = make_builtin("formation12d", &Map::new()).unwrap();
        let fs = conv_control_set(&f, 0.0, &f.initial_state);
        assert_eq!(fs.equalities.len(), 6);
        assert_eq!(fs.atoms.len(), 12);
        let radii: Vec<f64> = fs.atoms[..4]
            .iter()
            .filter_map(|a| match a {
                Atom::ArcEpigraph { radius, .. } => Some(*radius),
                _ => None,
            })
            .collect();
        assert_eq!(radii, vec![3.0, 1.0]);
    }

    #[test]
    fn projection_examples() {
        let v = conv_control_set(&vehicle(), 0.0, &[0.0, 0.0]);
        let p = project(&v, &[2.0, 0.0], 1e-9).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
        let q = project(&v, &[0.3, -0.2], 1e-9).unwrap();
        assert_eq!(q, vec![0.3, -0.2]);
    }
}
