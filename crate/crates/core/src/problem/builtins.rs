use super::{AgentLayout, ControlSetDescriptor, ProblemSpec, StructuredForm};
use crate::error::ProblemError;
use nalgebra::DMatrix;
use serde_json::{Map, Value};
use std::f64::consts::PI;
use std::sync::Arc;

/// Parameters of the two-gear motor/wheel system.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GearParams {
    /// Motor inertia.
    pub c1: f64,
    /// Wheel inertia plus reflected masses.
    pub c2: f64,
    pub terminal_weight: f64,
    /// Bound on |motor speed|.
    pub speed_limit: f64,
}

impl Default for GearParams {
    fn default() -> Self {
        Self {
            c1: 1.0,
            c2: 3.0,
            terminal_weight: 1000.0,
            speed_limit: 0.1,
        }
    }
}

impl GearParams {
    /// Effective inertia `c1 + c2 g²` in gear `g`.
    pub fn inertia(&self, gear: f64) -> f64 {
        self.c1 + self.c2 * gear * gear
    }
}

/// Parameters of the three-agent formation problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FormationParams {
    /// Speed of the leader's reference along the horizontal axis.
    pub ref_speed: f64,
    /// Desired offset of agent 2 from agent 1.
    pub offset: [f64; 2],
    pub accel_min: f64,
    pub accel_max: f64,
    pub max_angle: f64,
}

impl Default for FormationParams {
    fn default() -> Self {
        Self {
            ref_speed: 2.0,
            offset: [-(3f64.sqrt()), 1.0],
            accel_min: -1.0,
            accel_max: 3.0,
            max_angle: PI / 6.0,
        }
    }
}

/// Which built-in a spec came from; drives the closed forms used elsewhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Builtin {
    Vehicle2d,
    Gear4d(GearParams),
    Formation12d(FormationParams),
}

pub fn builtin_names() -> &'static [&'static str] {
    &["vehicle2d", "formation12d", "gear4d"]
}

/// Override keys accepted by [`make_builtin`] for `name`.
pub fn tunables(name: &str) -> Option<&'static [&'static str]> {
    match name {
        "vehicle2d" => Some(&["x0", "horizon"]),
        "gear4d" => Some(&["x0", "horizon", "terminal_weight", "speed_limit", "c1", "c2"]),
        "formation12d" => Some(&["x0", "horizon", "ref_speed"]),
        _ => None,
    }
}

fn get_vec(key: &str, v: &Value, len: usize) -> Result<Vec<f64>, ProblemError> {
    let bad = |reason: String| ProblemError::BadOverride {
        key: key.to_string(),
        reason,
    };
    let arr = v.as_array().ok_or_else(|| bad("expected an array of numbers".into()))?;
    if arr.len() != len {
        return Err(bad(format!("expected {len} entries, got {}", arr.len())));
    }
    arr.iter()
        .map(|e| e.as_f64().filter(|x| x.is_finite()).ok_or_else(|| bad("non-numeric entry".into())))
        .collect()
}

fn get_num(key: &str, v: &Value) -> Result<f64, ProblemError> {
    v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| ProblemError::BadOverride {
        key: key.to_string(),
        reason: "expected a finite number".into(),
    })
}

fn positive(key: &str, x: f64) -> Result<f64, ProblemError> {
    if x > 0.0 {
        Ok(x)
    } else {
        Err(ProblemError::BadOverride {
            key: key.to_string(),
            reason: "must be positive".into(),
        })
    }
}

/// Builds one of the shipped example problems.
///
/// `overrides` may only name keys from [`tunables`]; `x0` is an array of
/// length `n`, `horizon` an array `[t, T]`.
pub fn make_builtin(name: &str, overrides: &Map<String, Value>) -> Result<ProblemSpec, ProblemError> {
    let allowed = tunables(name).ok_or_else(|| ProblemError::UnknownProblem(name.to_string()))?;
    for key in overrides.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(ProblemError::NotTunable {
                problem: name.to_string(),
                key: key.clone(),
                allowed: allowed.join(", "),
            });
        }
    }
    let horizon = |default: (f64, f64)| -> Result<(f64, f64), ProblemError> {
        match overrides.get("horizon") {
            Some(v) => {
                let h = get_vec("horizon", v, 2)?;
                Ok((h[0], h[1]))
            }
            None => Ok(default),
        }
    };
    let x0 = |n: usize, default: Vec<f64>| -> Result<Vec<f64>, ProblemError> {
        match overrides.get("x0") {
            Some(v) => get_vec("x0", v, n),
            None => Ok(default),
        }
    };
    match name {
        "vehicle2d" => vehicle2d(x0(2, vec![-1.0, -0.5])?, horizon((0.0, 1.0))?),
        "gear4d" => {
            let mut p = GearParams::default();
            for (key, v) in overrides {
                match key.as_str() {
                    "terminal_weight" => p.terminal_weight = get_num(key, v)?,
                    "speed_limit" => p.speed_limit = positive(key, get_num(key, v)?)?,
                    "c1" => p.c1 = positive(key, get_num(key, v)?)?,
                    "c2" => p.c2 = positive(key, get_num(key, v)?)?,
                    _ => {}
                }
            }
            gear4d(p, x0(4, vec![0.0; 4])?, horizon((0.0, 1.0))?)
        }
        "formation12d" => {
            let mut p = FormationParams::default();
            if let Some(v) = overrides.get("ref_speed") {
                p.ref_speed = get_num("ref_speed", v)?;
            }
            formation12d(p, x0(12, default_formation_start())?, horizon((0.0, 10.0))?)
        }
        _ => unreachable!("checked by tunables"),
    }
}

/// Agents at rest: leader at the origin, followers two units behind and to
/// either side.
fn default_formation_start() -> Vec<f64> {
    vec![
        0.0, 0.0, 0.0, 0.0, //
        -2.0, 0.0, 2.0, 0.0, //
        -2.0, 0.0, -2.0, 0.0,
    ]
}

/// Unit-speed planar vehicle steered by its heading; terminal cost is the
/// distance to the origin.
pub fn vehicle2d(x0: Vec<f64>, horizon: (f64, f64)) -> Result<ProblemSpec, ProblemError> {
    let spec = ProblemSpec::new(
        "vehicle2d",
        2,
        horizon,
        x0,
        Arc::new(|_, _, a, out| {
            out[0] = a[0].cos();
            out[1] = a[0].sin();
        }),
        Arc::new(|_, _, _| 0.0),
        Arc::new(crate::linalg::norm),
        ControlSetDescriptor::Box {
            lower: vec![-PI],
            upper: vec![PI],
        },
    )?
    .with_structured(StructuredForm {
        m: Arc::new(|_| DMatrix::zeros(2, 2)),
        phi: Arc::new(|_, a, out| {
            out[0] = a[0].cos();
            out[1] = a[0].sin();
        }),
        lx: Arc::new(|_, _| 0.0),
        la: Arc::new(|_, _| 0.0),
    });
    Ok(ProblemSpec {
        builtin: Some(Builtin::Vehicle2d),
        ..spec
    })
}

/// Double-integrator shift: position rows pick up the velocity components.
pub(crate) fn shift_matrix(agents: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(4 * agents, 4 * agents);
    for l in 0..agents {
        m[(4 * l, 4 * l + 1)] = 1.0;
        m[(4 * l + 2, 4 * l + 3)] = 1.0;
    }
    m
}

/// Motor driving a wheel through a two-speed gearbox.
///
/// State: motor angle, motor speed, wheel angle, wheel speed. Control: gear
/// ratio in {1, 2} and torque in [0, 1].
pub fn gear4d(p: GearParams, x0: Vec<f64>, horizon: (f64, f64)) -> Result<ProblemSpec, ProblemError> {
    let accel = move |a: &[f64], out: &mut [f64]| {
        let j = p.inertia(a[0]);
        out[1] = a[1] / j;
        out[3] = -a[0] * a[1] / j;
    };
    let spec = ProblemSpec::new(
        "gear4d",
        4,
        horizon,
        x0,
        Arc::new(move |_, x, a, out| {
            accel(a, out);
            out[0] = x[1];
            out[2] = x[3];
        }),
        Arc::new(|_, _, a| a[1]),
        Arc::new(move |x| p.terminal_weight * x[2]),
        ControlSetDescriptor::Product(vec![
            ControlSetDescriptor::Finite(vec![vec![1.0], vec![2.0]]),
            ControlSetDescriptor::Box {
                lower: vec![0.0],
                upper: vec![1.0],
            },
        ]),
    )?
    .with_constraint(Arc::new(move |_, x| x[1].abs() - p.speed_limit))
    .with_structured(StructuredForm {
        m: Arc::new(|_| shift_matrix(1)),
        phi: Arc::new(move |_, a, out| {
            out[0] = 0.0;
            out[2] = 0.0;
            accel(a, out);
        }),
        lx: Arc::new(|_, _| 0.0),
        la: Arc::new(|_, a| a[1]),
    });
    Ok(ProblemSpec {
        builtin: Some(Builtin::Gear4d(p)),
        ..spec
    })
}

fn rot(deg: f64, w: [f64; 2]) -> [f64; 2] {
    let (s, c) = deg.to_radians().sin_cos();
    [c * w[0] - s * w[1], s * w[0] + c * w[1]]
}

/// Where agent 3 should sit given agents 1 and 2: `R(-60°) w1 + R(60°) w2`.
pub(crate) fn third_vertex(w1: [f64; 2], w2: [f64; 2]) -> [f64; 2] {
    let a = rot(-60.0, w1);
    let b = rot(60.0, w2);
    [a[0] + b[0], a[1] + b[1]]
}

/// The three formation residuals at time `s`: leader vs reference, agent 2 vs
/// its offset from the leader, agent 3 vs the triangle vertex.
pub(crate) fn formation_residuals(p: &FormationParams, s: f64, x: &[f64]) -> [[f64; 2]; 3] {
    let p1 = [x[0], x[2]];
    let p2 = [x[4], x[6]];
    let p3 = [x[8], x[10]];
    let h = third_vertex(p1, p2);
    [
        [p1[0] - p.ref_speed * s, p1[1]],
        [p2[0] - p1[0] - p.offset[0], p2[1] - p1[1] - p.offset[1]],
        [p3[0] - h[0], p3[1] - h[1]],
    ]
}

/// `(thrust radius, braking radius, half-angle)` of the acceleration sectors.
pub(crate) fn formation_params_region(p: &FormationParams) -> (f64, f64, f64) {
    (p.accel_max, -p.accel_min, p.max_angle)
}

pub(crate) fn formation_cost(p: &FormationParams, s: f64, x: &[f64]) -> f64 {
    formation_residuals(p, s, x)
        .iter()
        .map(|r| r[0].hypot(r[1]))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Three planar double-integrator agents steered by acceleration magnitude
/// and angle, tracking a moving reference in a triangle formation.
pub fn formation12d(p: FormationParams, x0: Vec<f64>, horizon: (f64, f64)) -> Result<ProblemSpec, ProblemError> {
    let accel = |a: &[f64], out: &mut [f64]| {
        for l in 0..3 {
            let (sn, cs) = a[2 * l + 1].sin_cos();
            out[4 * l + 1] = a[2 * l] * cs;
            out[4 * l + 3] = a[2 * l] * sn;
        }
    };
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for _ in 0..3 {
        lower.extend([p.accel_min, -p.max_angle]);
        upper.extend([p.accel_max, p.max_angle]);
    }
    let spec = ProblemSpec::new(
        "formation12d",
        12,
        horizon,
        x0,
        Arc::new(move |_, x, a, out| {
            accel(a, out);
            for l in 0..3 {
                out[4 * l] = x[4 * l + 1];
                out[4 * l + 2] = x[4 * l + 3];
            }
        }),
        Arc::new(move |s, x, _| formation_cost(&p, s, x)),
        Arc::new(|_| 0.0),
        ControlSetDescriptor::Box { lower, upper },
    )?
    .with_structured(StructuredForm {
        m: Arc::new(|_| shift_matrix(3)),
        phi: Arc::new(move |_, a, out| {
            for l in 0..3 {
                out[4 * l] = 0.0;
                out[4 * l + 2] = 0.0;
            }
            accel(a, out);
        }),
        lx: Arc::new(move |s, x| formation_cost(&p, s, x)),
        la: Arc::new(|_, _| 0.0),
    });
    Ok(ProblemSpec {
        builtin: Some(Builtin::Formation12d(p)),
        agents: Some(AgentLayout {
            count: 3,
            states_per_agent: 4,
            controls_per_agent: 2,
        }),
        ..spec
    })
}
