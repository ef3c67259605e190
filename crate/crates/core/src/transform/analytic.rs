//! Closed forms for the shipped example problems.

use super::set::{Atom, ConvexControlSet, Equality, GeneratorBlock, GeneratorSample, Piece, Region2};
use super::ExtendedReal;
use crate::linalg::linspace;
use crate::problem::builtins::{formation_cost, formation_params_region};
use crate::problem::{Builtin, FormationParams, GearParams};
use std::f64::consts::PI;

/// Samples per arc in the formation generator blocks.
pub const ARC_SAMPLES: usize = 4001;

/// Planar geometry of a built-in's convexified control set.
///
/// In the shifted velocity `u = b + M x` the set is state independent: the
/// linked coordinates are pinned to zero and each plane carries the same
/// convex region.
#[derive(Clone, Debug)]
pub(crate) struct Geometry {
    pub n: usize,
    /// Velocity coordinate pairs carrying `region`.
    pub planes: Vec<[usize; 2]>,
    pub region: Region2,
    /// `(i, j)` means `b[i] = -x[j]`.
    pub links: Vec<(usize, usize)>,
}

pub(crate) fn gear_vertices(p: &GearParams) -> ([f64; 2], [f64; 2]) {
    let d1 = p.inertia(1.0);
    let d2 = p.inertia(2.0);
    ([-1.0 / d1, 1.0 / d1], [-1.0 / d2, 2.0 / d2])
}

/// Coefficients `(α, β)` with `H* = α b₂ + β b₄` on the gear polytope.
pub fn gear_hstar_coefficients(p: &GearParams) -> (f64, f64) {
    let d1 = p.inertia(1.0);
    let d2 = p.inertia(2.0);
    let beta = d2 - d1;
    (beta - d1, beta)
}

fn affine_through(c: [f64; 2], e: [f64; 2], normalise_on: usize) -> Atom {
    let mut w = [c[1] - e[1], e[0] - c[0]];
    let mut r = w[0] * c[0] + w[1] * c[1];
    if r < 0.0 {
        w = [-w[0], -w[1]];
        r = -r;
    }
    let k = w[normalise_on].abs();
    Atom::Affine {
        w: vec![w[0] / k, w[1] / k],
        r: r / k,
    }
}

pub(crate) fn geometry(b: &Builtin) -> Geometry {
    match b {
        Builtin::Vehicle2d => Geometry {
            n: 2,
            planes: vec![[0, 1]],
            region: Region2::unit_disk(),
            links: vec![],
        },
        Builtin::Gear4d(p) => {
            let (p1, p2) = gear_vertices(p);
            let (alpha, beta) = gear_hstar_coefficients(p);
            let poly = Region2::polygon(&[[0.0, 0.0], p2, p1]);
            let region = Region2 {
                pieces: poly.pieces,
                atoms: vec![
                    Atom::Affine {
                        w: vec![-1.0, -1.0],
                        r: 0.0,
                    },
                    Atom::Affine {
                        w: vec![2.0, 1.0],
                        r: 0.0,
                    },
                    Atom::Affine {
                        w: vec![alpha, beta],
                        r: 1.0,
                    },
                ],
            };
            Geometry {
                n: 4,
                planes: vec![[1, 3]],
                region,
                links: vec![(0, 1), (2, 3)],
            }
        }
        Builtin::Formation12d(p) => Geometry {
            n: 12,
            planes: (0..3).map(|l| [4 * l + 1, 4 * l + 3]).collect(),
            region: sector_hull(p),
            links: (0..3).flat_map(|l| [(4 * l, 4 * l + 1), (4 * l + 2, 4 * l + 3)]).collect(),
        },
    }
}

/// Hull of the two acceleration sectors in the `(b₂, b₄)` plane: radius
/// `accel_max` facing left (forward thrust) and radius `-accel_min` facing
/// right (braking), each with half-angle `max_angle`.
pub(crate) fn sector_hull(p: &FormationParams) -> Region2 {
    let (big, small, w) = formation_params_region(p);
    let (sw, cw) = w.sin_cos();
    let c_up = [-big * cw, big * sw];
    let c_dn = [-big * cw, -big * sw];
    let e_up = [small * cw, small * sw];
    let e_dn = [small * cw, -small * sw];
    Region2 {
        pieces: vec![
            Piece::Arc {
                radius: small,
                start: -w,
                sweep: 2.0 * w,
            },
            Piece::Segment { a: e_up, b: c_up },
            Piece::Arc {
                radius: big,
                start: PI - w,
                sweep: 2.0 * w,
            },
            Piece::Segment { a: c_dn, b: e_dn },
        ],
        atoms: vec![
            Atom::ArcEpigraph {
                along: 0,
                across: 1,
                sign: -1.0,
                radius: big,
                half_angle: w,
            },
            Atom::ArcEpigraph {
                along: 0,
                across: 1,
                sign: 1.0,
                radius: small,
                half_angle: w,
            },
            affine_through(c_up, e_up, 1),
            affine_through(c_dn, e_dn, 1),
        ],
    }
}

impl Geometry {
    /// Shifted velocity `u = b + M x`.
    pub fn shift(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        let mut u = b.to_vec();
        for &(i, j) in &self.links {
            u[i] += x[j];
        }
        u
    }

    /// Inverse of [`Geometry::shift`].
    pub fn unshift(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut b = u.to_vec();
        for &(i, j) in &self.links {
            b[i] -= x[j];
        }
        b
    }

    /// Membership residual of `u` in the shifted set.
    pub fn residual_u(&self, u: &[f64]) -> f64 {
        let mut r = 0.0f64;
        for &(i, _) in &self.links {
            r = r.max(u[i].abs());
        }
        for pl in &self.planes {
            r = r.max(self.region.residual([u[pl[0]], u[pl[1]]]));
        }
        r
    }

    /// Exact projection of `u` onto the shifted set.
    pub fn project_u(&self, u: &mut [f64]) {
        for &(i, _) in &self.links {
            u[i] = 0.0;
        }
        for pl in &self.planes {
            let q = self.region.project([u[pl[0]], u[pl[1]]]);
            u[pl[0]] = q[0];
            u[pl[1]] = q[1];
        }
    }

    /// Closed-form atoms of `Conv(B(s, x))` in the unshifted velocity.
    pub fn control_set(&self, x: &[f64]) -> ConvexControlSet {
        let n = self.n;
        let equalities = self
            .links
            .iter()
            .map(|&(i, j)| {
                let mut w = vec![0.0; n];
                w[i] = 1.0;
                Equality { w, r: -x[j] }
            })
            .collect();
        let mut atoms = Vec::new();
        for pl in &self.planes {
            for a in &self.region.atoms {
                atoms.push(lift(a, *pl, n));
            }
        }
        ConvexControlSet {
            dim: n,
            equalities,
            atoms,
            generators: None,
        }
    }
}

fn lift(a: &Atom, pl: [usize; 2], n: usize) -> Atom {
    match a {
        Atom::Affine { w, r } => {
            let mut full = vec![0.0; n];
            full[pl[0]] = w[0];
            full[pl[1]] = w[1];
            Atom::Affine { w: full, r: *r }
        }
        Atom::NormBall {
            coords,
            center,
            radius,
        } => Atom::NormBall {
            coords: coords.iter().map(|&c| pl[c]).collect(),
            center: center.clone(),
            radius: *radius,
        },
        Atom::ArcEpigraph {
            along,
            across,
            sign,
            radius,
            half_angle,
        } => Atom::ArcEpigraph {
            along: pl[*along],
            across: pl[*across],
            sign: *sign,
            radius: *radius,
            half_angle: *half_angle,
        },
    }
}

/// Control-dependent part of the conjugate in the shifted velocity.
pub(crate) fn control_part_cost(b: &Builtin, u: &[f64]) -> f64 {
    match b {
        Builtin::Gear4d(p) => {
            let (alpha, beta) = gear_hstar_coefficients(p);
            alpha * u[1] + beta * u[3]
        }
        _ => 0.0,
    }
}

/// Control-independent stage cost `Lx(s, x)`.
pub(crate) fn state_part_cost(b: &Builtin, s: f64, x: &[f64]) -> f64 {
    match b {
        Builtin::Formation12d(p) => formation_cost(p, s, x),
        _ => 0.0,
    }
}

pub(crate) fn hstar(b: &Builtin, s: f64, x: &[f64], v: &[f64], tol: f64) -> ExtendedReal {
    let g = geometry(b);
    let u = g.shift(x, v);
    if g.residual_u(&u) > tol {
        return ExtendedReal::PosInfinity;
    }
    ExtendedReal::Finite(state_part_cost(b, s, x) + control_part_cost(b, &u))
}

/// Maximiser of `a ↦ r cos(a − θ)` over `[-w, w]`, for a window narrower than π.
fn best_angle(theta: f64, w: f64) -> f64 {
    let t = crate::linalg::wrap_angle(theta);
    if t.abs() <= w {
        return t;
    }
    let d_lo = crate::linalg::wrap_angle(t + w).abs();
    let d_hi = crate::linalg::wrap_angle(t - w).abs();
    if d_lo <= d_hi {
        -w
    } else {
        w
    }
}

pub(crate) fn hamiltonian(b: &Builtin, s: f64, x: &[f64], p: &[f64]) -> (f64, Vec<f64>) {
    match b {
        Builtin::Vehicle2d => {
            let a = if p[0] == 0.0 && p[1] == 0.0 {
                0.0
            } else {
                (-p[1]).atan2(-p[0])
            };
            (p[0].hypot(p[1]), vec![a])
        }
        Builtin::Gear4d(g) => {
            let drift = -p[0] * x[1] - p[2] * x[3];
            let mut best = (0.0, vec![1.0, 0.0]);
            for gear in [1.0, 2.0] {
                let k = (-p[1] + p[3] * gear) / g.inertia(gear) - 1.0;
                if k > best.0 {
                    best = (k, vec![gear, 1.0]);
                }
            }
            (drift + best.0, best.1)
        }
        Builtin::Formation12d(f) => {
            let mut value = -formation_cost(f, s, x);
            let mut control = Vec::with_capacity(6);
            for l in 0..3 {
                let (pu, pv) = (p[4 * l + 1], p[4 * l + 3]);
                value -= p[4 * l] * x[4 * l + 1] + p[4 * l + 2] * x[4 * l + 3];
                // −a1 (pu cos a2 + pv sin a2): thrust a1 > 0 wants the angle
                // of (−pu, −pv), braking a1 < 0 the angle of (pu, pv).
                let theta = pv.atan2(pu);
                let mut best = (0.0, [0.0, 0.0]);
                for (a1, th) in [(f.accel_max, theta + PI), (f.accel_min, theta)] {
                    let a2 = best_angle(th, f.max_angle);
                    let v = -a1 * (pu * a2.cos() + pv * a2.sin());
                    if v > best.0 {
                        best = (v, [a1, a2]);
                    }
                }
                value += best.0;
                control.extend(best.1);
            }
            (value, control)
        }
    }
}

/// Generator blocks for the formation: arcs of both sectors plus the origin,
/// one block per agent.
pub(crate) fn formation_generators(p: &FormationParams, s: f64, x: &[f64]) -> GeneratorSample {
    let angles = linspace(-p.max_angle, p.max_angle, ARC_SAMPLES);
    let blocks = (0..3)
        .map(|l| {
            let mut points = Vec::with_capacity(2 * ARC_SAMPLES + 1);
            let mut controls = Vec::with_capacity(2 * ARC_SAMPLES + 1);
            let mut push = |a1: f64, a2: f64| {
                let (sn, cs) = a2.sin_cos();
                points.push(vec![-x[4 * l + 1], -a1 * cs, -x[4 * l + 3], -a1 * sn]);
                controls.push(vec![a1, a2]);
            };
            push(0.0, 0.0);
            for a1 in [p.accel_max, p.accel_min] {
                for &a2 in &angles {
                    push(a1, a2);
                }
            }
            let costs = vec![0.0; points.len()];
            GeneratorBlock {
                coords: (4 * l..4 * l + 4).collect(),
                control_coords: vec![2 * l, 2 * l + 1],
                points,
                costs,
                controls,
            }
        })
        .collect();
    GeneratorSample {
        base_cost: formation_cost(p, s, x),
        blocks,
    }
}
