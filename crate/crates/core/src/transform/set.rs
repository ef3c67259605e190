//! Convex control sets: scalar convex atoms, affine equalities and an optional
//! generator sample.

use crate::error::TransformError;
use crate::linalg::dot;
use crate::lp::{min_cost_combination, HullLp};
use std::f64::consts::PI;

/// Dykstra sweep cap.
pub const PROJECTION_SWEEPS: usize = 500;

/// One scalar convex constraint `h(b) ≤ 0`.
#[derive(Clone, Debug, PartialEq)]
pub enum Atom {
    /// `w · b − r ≤ 0`
    Affine { w: Vec<f64>, r: f64 },
    /// `‖b[coords] − center‖₂ − radius ≤ 0`
    NormBall {
        coords: Vec<usize>,
        center: Vec<f64>,
        radius: f64,
    },
    /// `sign · b[along] − √(radius² − b[across]²) ≤ 0` on the arc within
    /// `half_angle` of the `sign · along` axis, continued along its tangent
    /// lines beyond. With `half_angle = π/2` this is the whole half circle
    /// plus the strip behind it.
    ArcEpigraph {
        along: usize,
        across: usize,
        sign: f64,
        radius: f64,
        half_angle: f64,
    },
}

/// Arc ends and tangent slope of an arc atom; `None` when the tangent is
/// vertical.
pub(crate) fn arc_corner(radius: f64, half_angle: f64) -> Option<(f64, f64, f64)> {
    let (sn, cs) = half_angle.sin_cos();
    (cs > 1e-12).then(|| (radius * cs, radius * sn, sn / cs))
}

impl Atom {
    /// Constraint value; positive means violated. Outside the square-root
    /// domain the value grows linearly so it stays a usable residual.
    pub fn value(&self, b: &[f64]) -> f64 {
        match self {
            Atom::Affine { w, r } => dot(w, b) - r,
            Atom::NormBall {
                coords,
                center,
                radius,
            } => {
                let d: f64 = coords
                    .iter()
                    .zip(center)
                    .map(|(&i, c)| (b[i] - c) * (b[i] - c))
                    .sum::<f64>()
                    .sqrt();
                d - radius
            }
            Atom::ArcEpigraph {
                along,
                across,
                sign,
                radius,
                half_angle,
            } => {
                let (x, y) = (sign * b[*along], b[*across]);
                match arc_corner(*radius, *half_angle) {
                    Some((x0, y0, slope)) if y.abs() > y0 => x - x0 + slope * (y.abs() - y0),
                    _ if y.abs() <= *radius => x - (radius * radius - y * y).sqrt(),
                    _ => (y.abs() - radius) + x.max(0.0),
                }
            }
        }
    }

    /// A subgradient of [`Atom::value`] at `b`.
    pub fn subgradient(&self, b: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; b.len()];
        match self {
            Atom::Affine { w, .. } => g.copy_from_slice(w),
            Atom::NormBall { coords, center, .. } => {
                let d: f64 = coords
                    .iter()
                    .zip(center)
                    .map(|(&i, c)| (b[i] - c) * (b[i] - c))
                    .sum::<f64>()
                    .sqrt();
                if d > 0.0 {
                    for (&i, c) in coords.iter().zip(center) {
                        g[i] = (b[i] - c) / d;
                    }
                }
            }
            Atom::ArcEpigraph {
                along,
                across,
                sign,
                radius,
                half_angle,
            } => {
                let (x, y) = (sign * b[*along], b[*across]);
                match arc_corner(*radius, *half_angle) {
                    Some((_, y0, slope)) if y.abs() > y0 => {
                        g[*along] = *sign;
                        g[*across] = slope * y.signum();
                    }
                    _ if y.abs() < *radius => {
                        g[*along] = *sign;
                        g[*across] = y / (radius * radius - y * y).sqrt();
                    }
                    _ => {
                        g[*along] = if x > 0.0 { *sign } else { 0.0 };
                        g[*across] = y.signum();
                    }
                }
            }
        }
        g
    }

    /// Euclidean projection onto `{b : h(b) ≤ 0}`.
    pub fn project(&self, b: &mut [f64]) {
        if self.value(b) <= 0.0 {
            return;
        }
        match self {
            Atom::Affine { w, r } => {
                let ww = dot(w, w);
                if ww > 0.0 {
                    let t = (dot(w, b) - r) / ww;
                    for (bi, wi) in b.iter_mut().zip(w) {
                        *bi -= t * wi;
                    }
                }
            }
            Atom::NormBall {
                coords,
                center,
                radius,
            } => {
                let d: f64 = coords
                    .iter()
                    .zip(center)
                    .map(|(&i, c)| (b[i] - c) * (b[i] - c))
                    .sum::<f64>()
                    .sqrt();
                for (&i, c) in coords.iter().zip(center) {
                    b[i] = c + (b[i] - c) * radius / d;
                }
            }
            Atom::ArcEpigraph {
                along,
                across,
                sign,
                radius,
                half_angle,
            } => {
                let (x, y) = (sign * b[*along], b[*across]);
                let q = match arc_corner(*radius, *half_angle) {
                    Some((x0, y0, _)) => {
                        // Nearest of: radial foot on the arc, feet on the two
                        // tangent rays.
                        let mut cands = Vec::with_capacity(3);
                        if x > 0.0 && y.abs() <= x * half_angle.tan() {
                            let r = x.hypot(y);
                            cands.push([x * radius / r, y * radius / r]);
                        }
                        for s in [1.0, -1.0] {
                            // Ray from (x0, s y0) with direction (−sin, s cos).
                            let (sn, cs) = half_angle.sin_cos();
                            let d = [-sn, s * cs];
                            let t = ((x - x0) * d[0] + (y - s * y0) * d[1]).max(0.0);
                            cands.push([x0 + t * d[0], s * y0 + t * d[1]]);
                        }
                        let dist = |c: &[f64; 2]| (c[0] - x).hypot(c[1] - y);
                        cands.into_iter().min_by(|a, b| dist(a).total_cmp(&dist(b))).unwrap_or([x, y])
                    }
                    None => {
                        if x > 0.0 {
                            let r = x.hypot(y);
                            [x * radius / r, y * radius / r]
                        } else {
                            [x, y.clamp(-radius, *radius)]
                        }
                    }
                };
                b[*along] = sign * q[0];
                b[*across] = q[1];
            }
        }
    }
}

/// Affine equality `w · b = r`.
#[derive(Clone, Debug, PartialEq)]
pub struct Equality {
    pub w: Vec<f64>,
    pub r: f64,
}

impl Equality {
    pub fn residual(&self, b: &[f64]) -> f64 {
        dot(&self.w, b) - self.r
    }

    fn project(&self, b: &mut [f64]) {
        let ww = dot(&self.w, &self.w);
        if ww > 0.0 {
            let t = self.residual(b) / ww;
            for (bi, wi) in b.iter_mut().zip(&self.w) {
                *bi -= t * wi;
            }
        }
    }
}

/// Candidate extreme velocities for one group of coordinates, with the
/// controls that produce them and their stage costs.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorBlock {
    /// Velocity coordinates covered by this block.
    pub coords: Vec<usize>,
    /// Control coordinates the block's controls fill in.
    pub control_coords: Vec<usize>,
    pub points: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
    pub controls: Vec<Vec<f64>>,
}

/// Generators of `Conv(B(s, x))`, split into independent coordinate blocks
/// (the hull of a product is the product of the hulls). The minimal stage
/// cost of a generator tuple is `base_cost` plus the block costs.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSample {
    pub base_cost: f64,
    pub blocks: Vec<GeneratorBlock>,
}

impl GeneratorSample {
    /// Total number of generator points across blocks.
    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.points.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `max_j p·b_j − L^b(b_j)` over generator tuples, which is the conjugate
    /// of the sampled `L^b` at `p`.
    pub fn support(&self, p: &[f64]) -> f64 {
        let mut acc = -self.base_cost;
        for blk in &self.blocks {
            let best = blk
                .points
                .iter()
                .zip(&blk.costs)
                .map(|(q, c)| blk.coords.iter().zip(q).map(|(&i, v)| p[i] * v).sum::<f64>() - c)
                .fold(f64::NEG_INFINITY, f64::max);
            acc += best;
        }
        acc
    }

    /// Per-block LP: cheapest convex combination matching `b`. `None` when
    /// some block is infeasible.
    pub fn min_cost(&self, b: &[f64], tol: f64) -> Result<Option<Vec<crate::lp::Combination>>, TransformError> {
        let mut out = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let target: Vec<f64> = blk.coords.iter().map(|&i| b[i]).collect();
            match min_cost_combination(&blk.points, &blk.costs, &target, tol)? {
                HullLp::Optimal(c) => out.push(c),
                HullLp::Infeasible { .. } => return Ok(None),
            }
        }
        Ok(Some(out))
    }
}

/// Description of `Conv(B(s, x))`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvexControlSet {
    pub dim: usize,
    pub equalities: Vec<Equality>,
    pub atoms: Vec<Atom>,
    pub generators: Option<GeneratorSample>,
}

impl ConvexControlSet {
    /// Whether atoms or equalities describe the set (otherwise only the
    /// generator hull does).
    pub fn has_closed_form(&self) -> bool {
        !self.atoms.is_empty() || !self.equalities.is_empty()
    }

    /// Largest constraint violation of `b` (zero when feasible). Uses the
    /// generator LP when there are no closed-form atoms.
    pub fn residual(&self, b: &[f64]) -> Result<f64, TransformError> {
        if self.has_closed_form() {
            let e = self
                .equalities
                .iter()
                .map(|e| e.residual(b).abs())
                .fold(0.0, f64::max);
            let a = self.atoms.iter().map(|a| a.value(b).max(0.0)).fold(0.0, f64::max);
            return Ok(e.max(a));
        }
        let gens = self.generators.as_ref().ok_or(TransformError::NoRepresentation)?;
        let mut worst = 0.0f64;
        for blk in &gens.blocks {
            let target: Vec<f64> = blk.coords.iter().map(|&i| b[i]).collect();
            let zero = vec![0.0; blk.points.len()];
            match min_cost_combination(&blk.points, &zero, &target, 0.0)? {
                HullLp::Optimal(c) => worst = worst.max(c.residual),
                HullLp::Infeasible { gap } => worst = worst.max(gap),
            }
        }
        Ok(worst)
    }

    pub fn contains(&self, b: &[f64], tol: f64) -> Result<bool, TransformError> {
        Ok(self.residual(b)? <= tol)
    }

    /// Projection of `b` onto the set.
    ///
    /// Closed-form sets use Dykstra's alternating projections over the
    /// equalities and atoms (at most [`PROJECTION_SWEEPS`] sweeps).
    /// Generator-only sets minimise `‖Σ γ_j b_j − b‖²` over the simplex.
    pub fn project(&self, b: &[f64], tol: f64) -> Result<Vec<f64>, TransformError> {
        if !self.has_closed_form() {
            return self.project_onto_hull(b, tol);
        }
        let m = self.equalities.len() + self.atoms.len();
        let mut x = b.to_vec();
        let mut incr = vec![vec![0.0; b.len()]; m];
        let mut y = vec![0.0; b.len()];
        for _ in 0..PROJECTION_SWEEPS {
            let before = x.clone();
            for (i, p) in incr.iter_mut().enumerate() {
                for ((yi, xi), pi) in y.iter_mut().zip(&x).zip(p.iter()) {
                    *yi = xi + pi;
                }
                if i < self.equalities.len() {
                    self.equalities[i].project(&mut y);
                } else {
                    self.atoms[i - self.equalities.len()].project(&mut y);
                }
                for ((pi, xi), yi) in p.iter_mut().zip(&x).zip(&y) {
                    *pi = xi + *pi - yi;
                }
                x.copy_from_slice(&y);
            }
            let moved = crate::linalg::dist(&x, &before);
            if moved <= 0.1 * tol && self.residual(&x)? <= tol {
                return Ok(x);
            }
        }
        if self.residual(&x)? <= tol {
            Ok(x)
        } else {
            Err(TransformError::ProjectionStalled(PROJECTION_SWEEPS))
        }
    }

    fn project_onto_hull(&self, b: &[f64], tol: f64) -> Result<Vec<f64>, TransformError> {
        let gens = self.generators.as_ref().ok_or(TransformError::NoRepresentation)?;
        let mut out = b.to_vec();
        for blk in &gens.blocks {
            let target: Vec<f64> = blk.coords.iter().map(|&i| b[i]).collect();
            let p = project_onto_point_hull(&blk.points, &target, tol);
            for (&i, v) in blk.coords.iter().zip(p) {
                out[i] = v;
            }
        }
        Ok(out)
    }
}

/// Projection onto the convex hull of `points` by accelerated projected
/// gradient on the simplex weights.
pub(crate) fn project_onto_point_hull(points: &[Vec<f64>], target: &[f64], tol: f64) -> Vec<f64> {
    let w = nearest_hull_weights(points, target, tol);
    let mut v = vec![0.0; target.len()];
    for (wj, p) in w.iter().zip(points) {
        if *wj != 0.0 {
            crate::linalg::axpy(*wj, p, &mut v);
        }
    }
    v
}

/// Simplex weights of the hull point nearest to `target`.
pub fn nearest_hull_weights(points: &[Vec<f64>], target: &[f64], tol: f64) -> Vec<f64> {
    let n = points.len();
    let d = target.len();
    let combine = |w: &[f64]| {
        let mut v = vec![0.0; d];
        for (wj, p) in w.iter().zip(points) {
            if *wj != 0.0 {
                crate::linalg::axpy(*wj, p, &mut v);
            }
        }
        v
    };
    // Lipschitz constant of the gradient: squared spectral norm of the point
    // matrix, bounded by its Frobenius norm.
    let lip: f64 = points.iter().map(|p| dot(p, p)).sum::<f64>().max(1e-12);
    let mut w = vec![1.0 / n as f64; n];
    let mut z = w.clone();
    let mut t = 1.0f64;
    for _ in 0..20_000 {
        let r: Vec<f64> = combine(&z).iter().zip(target).map(|(a, b)| a - b).collect();
        let mut next: Vec<f64> = z
            .iter()
            .zip(points)
            .map(|(zj, p)| zj - dot(p, &r) / lip)
            .collect();
        project_simplex(&mut next);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        let step = crate::linalg::dist(&next, &w);
        for j in 0..n {
            z[j] = next[j] + beta * (next[j] - w[j]);
        }
        w = next;
        t = t_next;
        if step <= 1e-3 * tol {
            break;
        }
    }
    w
}

/// In-place Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &mut [f64]) {
    // Translation-invariant; shifting keeps large inputs accurate.
    let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top.is_finite() {
        for x in v.iter_mut() {
            *x -= top;
        }
    }
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// A boundary piece of a planar convex region.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Piece {
    Segment { a: [f64; 2], b: [f64; 2] },
    /// Arc of the origin-centred circle, counter-clockwise from `start`.
    Arc { radius: f64, start: f64, sweep: f64 },
}

impl Piece {
    fn nearest(&self, p: [f64; 2]) -> [f64; 2] {
        match *self {
            Piece::Segment { a, b } => {
                let d = [b[0] - a[0], b[1] - a[1]];
                let dd = d[0] * d[0] + d[1] * d[1];
                let t = if dd > 0.0 {
                    (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / dd).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                [a[0] + t * d[0], a[1] + t * d[1]]
            }
            Piece::Arc { radius, start, sweep } => {
                let at = |ang: f64| [radius * ang.cos(), radius * ang.sin()];
                let th = p[1].atan2(p[0]);
                let rel = (th - start).rem_euclid(2.0 * PI);
                if rel <= sweep && (p[0] != 0.0 || p[1] != 0.0) {
                    let r = p[0].hypot(p[1]);
                    [p[0] * radius / r, p[1] * radius / r]
                } else {
                    let e0 = at(start);
                    let e1 = at(start + sweep);
                    let d0 = (p[0] - e0[0]).hypot(p[1] - e0[1]);
                    let d1 = (p[0] - e1[0]).hypot(p[1] - e1[1]);
                    if d0 <= d1 {
                        e0
                    } else {
                        e1
                    }
                }
            }
        }
    }
}

/// Planar convex region given by its boundary pieces (for exact projection)
/// and by atoms over coordinates 0, 1 (for membership).
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Region2 {
    pub pieces: Vec<Piece>,
    pub atoms: Vec<Atom>,
}

impl Region2 {
    pub fn residual(&self, p: [f64; 2]) -> f64 {
        self.atoms.iter().map(|a| a.value(&p).max(0.0)).fold(0.0, f64::max)
    }

    pub fn project(&self, p: [f64; 2]) -> [f64; 2] {
        if self.residual(p) <= 0.0 {
            return p;
        }
        let mut best = p;
        let mut best_d = f64::INFINITY;
        for piece in &self.pieces {
            let q = piece.nearest(p);
            let d = (q[0] - p[0]).hypot(q[1] - p[1]);
            if d < best_d {
                best_d = d;
                best = q;
            }
        }
        best
    }

    pub fn unit_disk() -> Self {
        Region2 {
            pieces: vec![Piece::Arc {
                radius: 1.0,
                start: -PI,
                sweep: 2.0 * PI,
            }],
            atoms: vec![Atom::NormBall {
                coords: vec![0, 1],
                center: vec![0.0, 0.0],
                radius: 1.0,
            }],
        }
    }

    /// A point strictly inside: the mean of the piece ends and arc midpoints.
    pub fn interior_point(&self) -> [f64; 2] {
        let mut acc = [0.0, 0.0];
        let mut count = 0.0;
        let mut add = |p: [f64; 2]| {
            acc[0] += p[0];
            acc[1] += p[1];
            count += 1.0;
        };
        for piece in &self.pieces {
            match *piece {
                Piece::Segment { a, b } => {
                    add(a);
                    add(b);
                }
                Piece::Arc { radius, start, sweep } => {
                    for f in [0.0, 0.5, 1.0] {
                        let (s, c) = (start + f * sweep).sin_cos();
                        add([radius * c, radius * s]);
                    }
                }
            }
        }
        [acc[0] / count, acc[1] / count]
    }

    /// Polygon from counter-clockwise vertices.
    pub fn polygon(v: &[[f64; 2]]) -> Self {
        let n = v.len();
        let mut pieces = Vec::with_capacity(n);
        let mut atoms = Vec::with_capacity(n);
        for i in 0..n {
            let a = v[i];
            let b = v[(i + 1) % n];
            pieces.push(Piece::Segment { a, b });
            // Outward normal of a counter-clockwise edge.
            let w = vec![b[1] - a[1], a[0] - b[0]];
            let r = w[0] * a[0] + w[1] * a[1];
            atoms.push(Atom::Affine { w, r });
        }
        Region2 { pieces, atoms }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_projection() {
        let mut v = vec![0.5, 0.5, 0.5];
        project_simplex(&mut v);
        for x in &v {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let mut w = vec![2.0, 0.0];
        project_simplex(&mut w);
        assert_eq!(w, vec![1.0, 0.0]);
    }

    #[test]
    fn arc_atom_projection() {
        // Region right of the left half circle of radius 3.
        let a = Atom::ArcEpigraph {
            along: 0,
            across: 1,
            sign: -1.0,
            radius: 3.0,
            half_angle: std::f64::consts::FRAC_PI_2,
        };
        let mut p = vec![-4.0, 0.0];
        a.project(&mut p);
        assert!((p[0] + 3.0).abs() < 1e-15 && p[1] == 0.0);
        let mut q = vec![1.0, 5.0];
        a.project(&mut q);
        assert_eq!(q, vec![1.0, 3.0]);
        assert!(a.value(&[2.0, 0.0]) < 0.0);
    }

    #[test]
    fn arc_atom_tangent_extension() {
        let w = std::f64::consts::FRAC_PI_6;
        let a = Atom::ArcEpigraph {
            along: 0,
            across: 1,
            sign: 1.0,
            radius: 1.0,
            half_angle: w,
        };
        // On the arc the printed form is exact.
        let y: f64 = 0.3;
        assert!(a.value(&[(1.0 - y * y).sqrt(), y]).abs() < 1e-15);
        // Beyond the arc end the boundary is the tangent line.
        let (x0, y0) = (w.cos(), w.sin());
        let p = [x0 - 0.5 * w.sin(), y0 + 0.5 * w.cos()];
        assert!(a.value(&p).abs() < 1e-12);
        assert!(a.value(&[-2.0, 1.5]) < 0.0);
        for start in [[2.0, 0.1], [0.5, 3.0], [3.0, -2.0]] {
            let mut q = start.to_vec();
            a.project(&mut q);
            assert!(a.value(&q).abs() < 1e-12, "{q:?}");
            // The residual direction is normal to the boundary: nudging along
            // the boundary does not get closer.
            let d = (q[0] - start[0]).hypot(q[1] - start[1]);
            for t in [-1e-3, 1e-3] {
                let mut r = [q[0] + t, q[1]];
                let mut rr = r.to_vec();
                a.project(&mut rr);
                r = [rr[0], rr[1]];
                assert!((r[0] - start[0]).hypot(r[1] - start[1]) >= d - 1e-12);
            }
        }
    }

    #[test]
    fn polygon_projection() {
        let sq = Region2::polygon(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        assert_eq!(sq.project([2.0, 0.5]), [1.0, 0.5]);
        assert_eq!(sq.project([2.0, 2.0]), [1.0, 1.0]);
        assert_eq!(sq.project([0.2, 0.3]), [0.2, 0.3]);
    }

    #[test]
    fn dykstra_on_ball_and_halfplane() {
        let set = ConvexControlSet {
            dim: 2,
            equalities: vec![],
            atoms: vec![
                Atom::NormBall {
                    coords: vec![0, 1],
                    center: vec![0.0, 0.0],
                    radius: 1.0,
                },
                Atom::Affine {
                    w: vec![1.0, 0.0],
                    r: 0.0,
                },
            ],
            generators: None,
        };
        let p = set.project(&[1.0, 2.0], 1e-10).unwrap();
        assert!(p[0].abs() < 1e-8 && (p[1] - 1.0).abs() < 1e-8, "{p:?}");
    }

    #[test]
    fn hull_projection_of_generators() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let p = project_onto_point_hull(&pts, &[1.0, 1.0], 1e-10);
        assert!((p[0] - 0.5).abs() < 1e-7 && (p[1] - 0.5).abs() < 1e-7, "{p:?}");
    }
}
