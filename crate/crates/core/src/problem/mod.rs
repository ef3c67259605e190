//! Problem data: dynamics, costs, state constraint and admissible controls.

pub(crate) mod builtins;

pub use builtins::{
    builtin_names, make_builtin, tunables, Builtin, FormationParams, GearParams,
};

use crate::error::ProblemError;
use nalgebra::DMatrix;
use rand::Rng;
use std::fmt;
use std::sync::{Arc, OnceLock};

pub type DynamicsFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type StageCostFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;
pub type TerminalCostFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type ConstraintFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type MembershipFn = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// Upper bound on the number of control samples drawn from box factors.
pub const SAMPLE_BUDGET: usize = 10_000;

/// Admissible control set `A`.
#[derive(Clone)]
pub enum ControlSetDescriptor {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Finite(Vec<Vec<f64>>),
    Product(Vec<ControlSetDescriptor>),
    Custom {
        sample: Vec<Vec<f64>>,
        contains: MembershipFn,
    },
}

impl fmt::Debug for ControlSetDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Box { lower, upper } => write!(f, "Box({lower:?}, {upper:?})"),
            Self::Finite(p) => write!(f, "Finite({p:?})"),
            Self::Product(p) => f.debug_tuple("Product").field(p).finish(),
            Self::Custom { sample, .. } => write!(f, "Custom({} samples)", sample.len()),
        }
    }
}

impl ControlSetDescriptor {
    pub fn dim(&self) -> usize {
        match self {
            Self::Box { lower, .. } => lower.len(),
            Self::Finite(p) => p.first().map_or(0, Vec::len),
            Self::Product(parts) => parts.iter().map(Self::dim).sum(),
            Self::Custom { sample, .. } => sample.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        let bad = |m: &str| Err(ProblemError::Invalid(m.to_string()));
        match self {
            Self::Box { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return bad("box bounds must be non-empty and of equal length");
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                    return bad("box lower bound exceeds upper bound");
                }
            }
            Self::Finite(points) => {
                if points.is_empty() {
                    return bad("finite control set is empty");
                }
                let d = points[0].len();
                if points.iter().any(|p| p.len() != d) {
                    return bad("finite control points differ in length");
                }
                for (i, p) in points.iter().enumerate() {
                    if points[..i].iter().any(|q| q == p) {
                        return bad("finite control points must be distinct");
                    }
                }
            }
            Self::Product(parts) => {
                if parts.is_empty() {
                    return bad("empty product");
                }
                for p in parts {
                    p.validate()?;
                }
            }
            Self::Custom { sample, contains } => {
                if sample.is_empty() {
                    return bad("custom sampler has no samples");
                }
                if sample.iter().any(|s| !contains(s)) {
                    return bad("custom sample point fails its own membership test");
                }
            }
        }
        Ok(())
    }

    /// Whether `a` lies in the set, up to `tol` on box bounds and finite points.
    pub fn contains(&self, a: &[f64], tol: f64) -> bool {
        match self {
            Self::Box { lower, upper } => a
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol),
            Self::Finite(points) => points
                .iter()
                .any(|p| p.iter().zip(a).all(|(x, y)| (x - y).abs() <= tol)),
            Self::Product(parts) => {
                let mut off = 0;
                parts.iter().all(|p| {
                    let d = p.dim();
                    let ok = p.contains(&a[off..off + d], tol);
                    off += d;
                    ok
                })
            }
            Self::Custom { contains, .. } => contains(a),
        }
    }

    /// `Some(true)` when the set is convex, `Some(false)` when it is not,
    /// `None` when that cannot be decided from the descriptor.
    pub fn is_convex(&self) -> Option<bool> {
        match self {
            Self::Box { .. } => Some(true),
            Self::Finite(points) => Some(points.len() == 1),
            Self::Product(parts) => {
                let mut all = Some(true);
                for p in parts {
                    match p.is_convex() {
                        Some(false) => return Some(false),
                        None => all = None,
                        Some(true) => {}
                    }
                }
                all
            }
            Self::Custom { .. } => None,
        }
    }

    fn box_axes(&self) -> usize {
        match self {
            Self::Box { lower, upper } => lower.iter().zip(upper).filter(|(l, u)| l < u).count(),
            Self::Product(parts) => parts.iter().map(Self::box_axes).sum(),
            _ => 0,
        }
    }

    fn discrete_count(&self) -> usize {
        match self {
            Self::Finite(p) => p.len(),
            Self::Custom { sample, .. } => sample.len(),
            Self::Product(parts) => parts.iter().map(Self::discrete_count).product(),
            Self::Box { .. } => 1,
        }
    }

    /// Default sample: all points of finite factors and a uniform grid on box
    /// factors, at most [`SAMPLE_BUDGET`] box points in total. Per-axis counts
    /// are odd so box midpoints are always sampled.
    pub fn default_sample(&self) -> Vec<Vec<f64>> {
        let axes = self.box_axes();
        let per_axis = if axes == 0 {
            1
        } else {
            let budget = (SAMPLE_BUDGET / self.discrete_count().max(1)).max(1) as f64;
            let mut q = budget.powf(1.0 / axes as f64).floor() as usize;
            // Guard against powf landing just below an exact root.
            while (q + 1).pow(axes as u32) as f64 <= budget {
                q += 1;
            }
            if q.is_multiple_of(2) {
                q -= 1;
            }
            q.max(1)
        };
        self.grid_sample(per_axis)
    }

    /// Grid sample with `per_axis` points on every non-degenerate box axis.
    pub fn grid_sample(&self, per_axis: usize) -> Vec<Vec<f64>> {
        match self {
            Self::Box { lower, upper } => {
                let axes: Vec<Vec<f64>> = lower
                    .iter()
                    .zip(upper)
                    .map(|(&l, &u)| {
                        if l < u {
                            crate::linalg::linspace(l, u, per_axis)
                        } else {
                            vec![l]
                        }
                    })
                    .collect();
                cartesian(&axes.iter().map(|a| a.iter().map(|v| vec![*v]).collect()).collect::<Vec<_>>())
            }
            Self::Finite(p) => p.clone(),
            Self::Custom { sample, .. } => sample.clone(),
            Self::Product(parts) => {
                let factors: Vec<Vec<Vec<f64>>> = parts.iter().map(|p| p.grid_sample(per_axis)).collect();
                cartesian(&factors)
            }
        }
    }

    /// Uniform random member (box factors uniform, finite factors uniform).
    pub fn random_point<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Self::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(&l, &u)| if l < u { rng.gen_range(l..=u) } else { l })
                .collect(),
            Self::Finite(p) => p[rng.gen_range(0..p.len())].clone(),
            Self::Custom { sample, .. } => sample[rng.gen_range(0..sample.len())].clone(),
            Self::Product(parts) => parts.iter().flat_map(|p| p.random_point(rng)).collect(),
        }
    }
}

fn cartesian(factors: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![vec![]];
    for f in factors {
        let mut next = Vec::with_capacity(out.len() * f.len());
        for prefix in &out {
            for item in f {
                let mut v = prefix.clone();
                v.extend_from_slice(item);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// Splitting `f = M(s) x + φ(s, a)` and `L = Lx(s, x) + La(s, a)`.
#[derive(Clone)]
pub struct StructuredForm {
    pub m: Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>,
    pub phi: Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>,
    pub lx: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
    pub la: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
}

/// How a multi-agent state splits into per-agent blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgentLayout {
    pub count: usize,
    pub states_per_agent: usize,
    pub controls_per_agent: usize,
}

/// An optimal control problem
///
/// ```text
/// minimize ∫_t^T L(s, x, a) ds + g(x(T))
/// subject to ẋ = f(s, x, a), x(t) = x0, a(s) ∈ A, c(s, x(s)) ≤ 0.
/// ```
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub state_dim: usize,
    pub control_dim: usize,
    pub horizon: (f64, f64),
    pub initial_state: Vec<f64>,
    pub dynamics: DynamicsFn,
    pub stage_cost: StageCostFn,
    pub terminal_cost: TerminalCostFn,
    pub state_constraint: Option<ConstraintFn>,
    pub control_set: ControlSetDescriptor,
    pub structured: Option<StructuredForm>,
    pub builtin: Option<Builtin>,
    pub agents: Option<AgentLayout>,
    sample: Arc<OnceLock<Vec<Vec<f64>>>>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .field("horizon", &self.horizon)
            .field("initial_state", &self.initial_state)
            .field("control_set", &self.control_set)
            .field("structured", &self.structured.is_some())
            .field("builtin", &self.builtin)
            .finish()
    }
}

impl ProblemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        horizon: (f64, f64),
        initial_state: Vec<f64>,
        dynamics: DynamicsFn,
        stage_cost: StageCostFn,
        terminal_cost: TerminalCostFn,
        control_set: ControlSetDescriptor,
    ) -> Result<Self, ProblemError> {
        let spec = ProblemSpec {
            name: name.into(),
            state_dim,
            control_dim: control_set.dim(),
            horizon,
            initial_state,
            dynamics,
            stage_cost,
            terminal_cost,
            state_constraint: None,
            control_set,
            structured: None,
            builtin: None,
            agents: None,
            sample: Arc::new(OnceLock::new()),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_constraint(mut self, c: ConstraintFn) -> Self {
        self.state_constraint = Some(c);
        self
    }

    pub fn with_structured(mut self, s: StructuredForm) -> Self {
        self.structured = Some(s);
        self
    }

    fn validate(&self) -> Result<(), ProblemError> {
        if self.state_dim == 0 || self.control_dim == 0 {
            return Err(ProblemError::Invalid("dimensions must be positive".into()));
        }
        let (t, tt) = self.horizon;
        if !(t < tt) || !t.is_finite() || !tt.is_finite() {
            return Err(ProblemError::Invalid(format!("horizon ({t}, {tt}) must satisfy t < T")));
        }
        if self.initial_state.len() != self.state_dim {
            return Err(ProblemError::Invalid("initial state has wrong length".into()));
        }
        self.control_set.validate()
    }

    /// Returns a copy with a different initial state.
    pub fn with_initial_state(&self, x0: Vec<f64>) -> Result<Self, ProblemError> {
        if x0.len() != self.state_dim {
            return Err(ProblemError::Invalid("initial state has wrong length".into()));
        }
        let mut s = self.clone();
        s.initial_state = x0;
        Ok(s)
    }

    pub fn f(&self, s: f64, x: &[f64], a: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim];
        (self.dynamics)(s, x, a, &mut out);
        out
    }

    pub fn stage(&self, s: f64, x: &[f64], a: &[f64]) -> f64 {
        (self.stage_cost)(s, x, a)
    }

    pub fn terminal(&self, x: &[f64]) -> f64 {
        (self.terminal_cost)(x)
    }

    /// `c(s, x)`, or `-∞` when the problem has no state constraint.
    pub fn constraint(&self, s: f64, x: &[f64]) -> f64 {
        self.state_constraint
            .as_ref()
            .map_or(f64::NEG_INFINITY, |c| c(s, x))
    }

    /// Cached default control sample.
    pub fn control_sample(&self) -> &[Vec<f64>] {
        self.sample.get_or_init(|| self.control_set.default_sample())
    }

    /// True when `L(s, x, a)` does not vary with `a` on sampled points.
    pub fn stage_cost_control_independent(&self) -> bool {
        if let Some(sf) = &self.structured {
            let s = self.horizon.0;
            return self.control_sample().iter().all(|a| (sf.la)(s, a).abs() <= 1e-12);
        }
        let mut rng = crate::solver::seeded_rng(7);
        let sample = self.control_sample();
        (0..5).all(|_| {
            let s = rng.gen_range(self.horizon.0..=self.horizon.1);
            let x: Vec<f64> = self
                .initial_state
                .iter()
                .map(|v| v + rng.gen_range(-1.0..1.0))
                .collect();
            let l0 = self.stage(s, &x, &sample[0]);
            sample.iter().all(|a| (self.stage(s, &x, a) - l0).abs() <= 1e-12)
        })
    }

    /// Sampled difference-quotient estimates of the Lipschitz constants of
    /// `f`, `L`, `g` and `c` in `x` around the initial state.
    pub fn lipschitz_estimates(&self, pairs: usize, radius: f64, seed: u64) -> LipschitzEstimates {
        let mut rng = crate::solver::seeded_rng(seed);
        let sample = self.control_sample();
        let mut est = LipschitzEstimates::default();
        for _ in 0..pairs {
            let s = rng.gen_range(self.horizon.0..=self.horizon.1);
            let a = &sample[rng.gen_range(0..sample.len())];
            let x: Vec<f64> = self
                .initial_state
                .iter()
                .map(|v| v + rng.gen_range(-radius..radius))
                .collect();
            let y: Vec<f64> = self
                .initial_state
                .iter()
                .map(|v| v + rng.gen_range(-radius..radius))
                .collect();
            let d = crate::linalg::dist(&x, &y);
            if d < 1e-12 {
                continue;
            }
            let q = |a: f64, b: f64| (a - b).abs() / d;
            est.dynamics = est
                .dynamics
                .max(crate::linalg::dist(&self.f(s, &x, a), &self.f(s, &y, a)) / d);
            est.stage = est.stage.max(q(self.stage(s, &x, a), self.stage(s, &y, a)));
            est.terminal = est.terminal.max(q(self.terminal(&x), self.terminal(&y)));
            if self.state_constraint.is_some() {
                est.constraint = est.constraint.max(q(self.constraint(s, &x), self.constraint(s, &y)));
            }
        }
        est
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LipschitzEstimates {
    pub dynamics: f64,
    pub stage: f64,
    pub terminal: f64,
    pub constraint: f64,
}

/// A path sampled on a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledPath {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// Quadrature rule for [`eval_cost_of_trajectory`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum QuadratureRule {
    #[default]
    LeftRiemann,
}

/// Left-endpoint Riemann sum of `L` along the path plus `g` at its last state.
pub fn eval_cost_of_trajectory(
    spec: &ProblemSpec,
    traj: &SampledPath,
    ctrl: &SampledPath,
    rule: QuadratureRule,
) -> Result<f64, ProblemError> {
    let QuadratureRule::LeftRiemann = rule;
    let n = traj.times.len();
    if n == 0 || traj.values.len() != n || ctrl.times != traj.times || ctrl.values.len() < n.saturating_sub(1) {
        return Err(ProblemError::GridMismatch);
    }
    if traj.times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ProblemError::NonMonotoneGrid);
    }
    let mut acc = crate::linalg::KahanSum::new(0.0);
    for i in 0..n - 1 {
        let h = traj.times[i + 1] - traj.times[i];
        acc.add(spec.stage(traj.times[i], &traj.values[i], &ctrl.values[i]) * h);
    }
    acc.add(spec.terminal(&traj.values[n - 1]));
    Ok(acc.value())
}
