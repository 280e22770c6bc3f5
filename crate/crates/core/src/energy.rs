//! Objectives over vertex positions and their gradients.
//!
//! Every objective maps flat positions to a scalar and can accumulate the
//! gradient with respect to those positions. [`energy_gradient`] chains that
//! gradient through the boundary projection and the softplus-normalized
//! convex sums down to the raw differential weights.

use std::f64::consts::PI;

use crate::complex::{BoundaryConstraint, SimplicialComplex};
use crate::diffrep::{convex_sum, pullback_vertex, DifferentialWeights};
use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EnergyKind<T> {
    /// Mean `|x|`.
    LX,
    /// Mean `|x| + |y|`.
    LXY,
    /// Rotate every vertex by `target_angle` about the origin, keeping radii.
    LSpin { target_angle: T },
    AnglePreserving,
    AreaPreserving,
    SymmetricDirichlet,
    Equilateral,
    Equiareal,
    /// Sampled L1 color reconstruction; see `imagewarp`.
    ImageL1,
}

impl<T: Real> EnergyKind<T> {
    /// The rotation toy at 175 degrees.
    pub fn spin() -> Self {
        EnergyKind::LSpin { target_angle: T::lit(175.0_f64.to_radians()) }
    }

    pub fn is_toy(&self) -> bool {
        matches!(self, EnergyKind::LX | EnergyKind::LXY | EnergyKind::LSpin { .. })
    }

    pub fn is_uv(&self) -> bool {
        matches!(
            self,
            EnergyKind::AnglePreserving
                | EnergyKind::AreaPreserving
                | EnergyKind::SymmetricDirichlet
                | EnergyKind::Equilateral
                | EnergyKind::Equiareal
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnergyKind::LX => "x",
            EnergyKind::LXY => "xy",
            EnergyKind::LSpin { .. } => "spin",
            EnergyKind::AnglePreserving => "angle-preserving",
            EnergyKind::AreaPreserving => "area-preserving",
            EnergyKind::SymmetricDirichlet => "sym-dirichlet",
            EnergyKind::Equilateral => "equilateral",
            EnergyKind::Equiareal => "equiareal",
            EnergyKind::ImageL1 => "image-l1",
        }
    }

    pub const UV_KINDS: [EnergyKind<T>; 5] = [
        EnergyKind::AnglePreserving,
        EnergyKind::AreaPreserving,
        EnergyKind::SymmetricDirichlet,
        EnergyKind::Equilateral,
        EnergyKind::Equiareal,
    ];
}

/// IPC-style barrier on signed simplex measures plus a linear push term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarrierSpec<T> {
    pub enabled: bool,
    /// Activation threshold, in area (2D) or volume (3D) units.
    pub d_hat: T,
    /// Slope of the linear term active below `2 * d_hat`.
    pub linear_scale: T,
}

impl<T: Real> BarrierSpec<T> {
    pub fn new(d_hat: T) -> Self {
        Self { enabled: true, d_hat, linear_scale: T::one() }
    }

    pub fn disabled() -> Self {
        Self { enabled: false, d_hat: T::lit(1e-8), linear_scale: T::one() }
    }

    /// Threshold used for image compaction: `1e-10 / sqrt(H * W)`.
    pub fn for_image(height: usize, width: usize) -> Self {
        Self::new(T::lit(1e-10 / ((height * width) as f64).sqrt()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled && !(self.d_hat > T::zero()) {
            return Err(invalid("barrier threshold must be positive"));
        }
        Ok(())
    }
}

impl<T: Real> Default for BarrierSpec<T> {
    fn default() -> Self {
        Self::new(T::lit(1e-8))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergySpec<T> {
    pub kind: EnergyKind<T>,
    pub barrier: BarrierSpec<T>,
}

/// A scalar function of flat vertex positions.
pub trait Objective<T: Real> {
    fn value(&self, positions: &[T]) -> T;

    /// Returns the value and adds its gradient into `grad`.
    fn value_and_gradient(&mut self, positions: &[T], grad: &mut [T]) -> T;

    /// Called by optimizers before each iteration.
    fn begin_iteration(&mut self, _iteration: usize, _total: usize) {}

    /// Called by optimizers with the accepted positions after each iteration.
    fn end_iteration(&mut self, _positions: &[T]) {}
}

/// Rest data captured once from the undeformed input.
#[derive(Clone, Debug, Default)]
pub struct ReferenceGeometry<T> {
    /// Per triangle: 3D interior angles at each corner.
    pub angles3d: Vec<[T; 3]>,
    pub areas3d: Vec<T>,
    /// Per triangle: inverse of the 2x2 edge matrix of the isometrically
    /// flattened rest triangle, row-major.
    pub rest_inverse: Vec<[T; 4]>,
    /// Initial positions for the rotation toy.
    pub initial: Vec<T>,
    /// Vertices that count toward per-vertex means.
    pub counted: Vec<bool>,
}

impl<T: Real> ReferenceGeometry<T> {
    /// Per-vertex reference: initial positions, excluding fully pinned
    /// vertices from the mean.
    pub fn for_toy(initial: &[T], dim: usize, constraints: &BoundaryConstraint<T>) -> Self {
        let n = initial.len() / dim;
        Self {
            initial: initial.to_vec(),
            counted: (0..n).map(|v| !constraints.fully_pinned(v, dim)).collect(),
            ..Self::default()
        }
    }

    /// Per-triangle rest angles, areas and flattening frames.
    pub fn for_mesh(positions: &[[T; 3]], triangles: &[[usize; 3]]) -> Result<Self> {
        let mut out = Self::default();
        for (t, tri) in triangles.iter().enumerate() {
            let p = tri.map(|v| positions[v]);
            let q = triangle_quantities(&[&p[0][..], &p[1][..], &p[2][..]]);
            if !(q.area > T::zero()) {
                return Err(invalid(format!("rest triangle {t} is degenerate")));
            }
            out.angles3d.push(q.angles);
            out.areas3d.push(q.area);
            out.rest_inverse.push(rest_inverse(p)?);
        }
        Ok(out)
    }
}

/// Interior angles and unsigned area of a 2D or 3D triangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriangleQuantities<T> {
    pub angles: [T; 3],
    pub area: T,
    /// Set when an edge has zero length; angles are then a 0/pi split.
    pub degenerate: bool,
}

fn diff<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Length of the cross product of two 2D or 3D vectors.
fn cross_norm<T: Real>(a: &[T], b: &[T]) -> T {
    if a.len() == 2 {
        (a[0] * b[1] - a[1] * b[0]).abs()
    } else {
        let x = a[1] * b[2] - a[2] * b[1];
        let y = a[2] * b[0] - a[0] * b[2];
        let z = a[0] * b[1] - a[1] * b[0];
        (x * x + y * y + z * z).sqrt()
    }
}

pub fn triangle_quantities<T: Real>(p: &[&[T]; 3]) -> TriangleQuantities<T> {
    let zero = T::zero();
    let edge_len = |i: usize, j: usize| dot(&diff(p[j], p[i]), &diff(p[j], p[i])).sqrt();
    // Edge k is opposite corner k.
    let lens = [edge_len(1, 2), edge_len(2, 0), edge_len(0, 1)];
    if let Some(k) = lens.iter().position(|&l| l == zero) {
        // Endpoints of the zero-length edge take pi and 0, the opposite corner 0.
        let (a, _) = ((k + 1) % 3, (k + 2) % 3);
        let mut angles = [zero; 3];
        angles[a] = T::PI();
        return TriangleQuantities { angles, area: zero, degenerate: true };
    }
    let mut angles = [zero; 3];
    for (k, angle) in angles.iter_mut().enumerate() {
        let e1 = diff(p[(k + 1) % 3], p[k]);
        let e2 = diff(p[(k + 2) % 3], p[k]);
        *angle = cross_norm(&e1, &e2).atan2(dot(&e1, &e2));
    }
    let area = T::lit(0.5) * cross_norm(&diff(p[1], p[0]), &diff(p[2], p[0]));
    TriangleQuantities { angles, area, degenerate: false }
}

fn rest_inverse<T: Real>(p: [[T; 3]; 3]) -> Result<[T; 4]> {
    let e1 = diff(&p[1], &p[0]);
    let e2 = diff(&p[2], &p[0]);
    let l1 = dot(&e1, &e1).sqrt();
    if !(l1 > T::zero()) {
        return Err(invalid("degenerate rest triangle"));
    }
    let x2 = dot(&e1, &e2) / l1;
    let y2 = cross_norm(&e1, &e2) / l1;
    // R = [[l1, x2], [0, y2]]
    let det = l1 * y2;
    if !(det > T::zero()) {
        return Err(invalid("degenerate rest triangle"));
    }
    Ok([T::one() / l1, -x2 / det, T::zero(), T::one() / y2])
}

/// Jacobian of the map from the flattened rest triangle to the UV triangle.
fn uv_jacobian<T: Real>(rinv: &[T; 4], u: [[T; 2]; 3]) -> [T; 4] {
    let d = [u[1][0] - u[0][0], u[2][0] - u[0][0], u[1][1] - u[0][1], u[2][1] - u[0][1]];
    [
        d[0] * rinv[0] + d[1] * rinv[2],
        d[0] * rinv[1] + d[1] * rinv[3],
        d[2] * rinv[0] + d[3] * rinv[2],
        d[2] * rinv[1] + d[3] * rinv[3],
    ]
}

fn singular_values_2x2<T: Real>(j: [T; 4]) -> (T, T) {
    let half = T::lit(0.5);
    let e = half * (j[0] + j[3]);
    let f = half * (j[0] - j[3]);
    let g = half * (j[2] + j[1]);
    let h = half * (j[2] - j[1]);
    let q = (e * e + h * h).sqrt();
    let r = (f * f + g * g).sqrt();
    (q + r, (q - r).abs())
}

/// Singular values `(s1 >= s2 >= 0)` of the linear map taking the rest
/// triangle, flattened into its own plane, onto the UV triangle.
pub fn jacobian_singular_values<T: Real>(rest: [[T; 3]; 3], uv: [[T; 2]; 3]) -> Result<(T, T)> {
    let rinv = rest_inverse(rest)?;
    Ok(singular_values_2x2(uv_jacobian(&rinv, uv)))
}

/// Signed angle at corner `k` of a 2D triangle and its gradient.
fn corner_angle<T: Real>(p: [[T; 2]; 3], k: usize) -> (T, [[T; 2]; 3]) {
    let (i1, i2) = ((k + 1) % 3, (k + 2) % 3);
    let e1 = [p[i1][0] - p[k][0], p[i1][1] - p[k][1]];
    let e2 = [p[i2][0] - p[k][0], p[i2][1] - p[k][1]];
    let c = e1[0] * e2[1] - e1[1] * e2[0];
    let d = e1[0] * e2[0] + e1[1] * e2[1];
    let theta = c.atan2(d);
    let den = c * c + d * d;
    let mut g = [[T::zero(); 2]; 3];
    if den > T::zero() {
        let g1 = [(d * e2[1] - c * e2[0]) / den, (-d * e2[0] - c * e2[1]) / den];
        let g2 = [(-d * e1[1] - c * e1[0]) / den, (d * e1[0] - c * e1[1]) / den];
        g[i1] = g1;
        g[i2] = g2;
        g[k] = [-(g1[0] + g2[0]), -(g1[1] + g2[1])];
    }
    (theta, g)
}

fn signed_area_and_gradient<T: Real>(p: [[T; 2]; 3]) -> (T, [[T; 2]; 3]) {
    (
        crate::complex::signed_area(p[0], p[1], p[2]),
        crate::complex::signed_area_gradient(p[0], p[1], p[2]),
    )
}

/// Unsigned area with its gradient (sign of the signed area times its slope).
fn area_and_gradient<T: Real>(p: [[T; 2]; 3]) -> (T, [[T; 2]; 3]) {
    let (s, mut g) = signed_area_and_gradient(p);
    let sign = if s < T::zero() { -T::one() } else { T::one() };
    for row in &mut g {
        row[0] = row[0] * sign;
        row[1] = row[1] * sign;
    }
    (s.abs(), g)
}

/// Angle errors at or below this count as exact.
const ANGLE_TOL: f64 = 1e-9;

#[inline]
fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Wraps an angle difference into `(-pi, pi]`.
pub fn wrap_angle<T: Real>(x: T) -> T {
    let tau = T::lit(2.0 * PI);
    let pi = T::PI();
    let mut w = x % tau;
    if w > pi {
        w = w - tau;
    } else if w <= -pi {
        w = w + tau;
    }
    w
}

/// Per-vertex toy losses on 2D (or the xy-plane of 3D) positions.
#[derive(Clone, Debug)]
pub struct ToyObjective<T> {
    kind: EnergyKind<T>,
    dim: usize,
    reference: ReferenceGeometry<T>,
}

impl<T: Real> ToyObjective<T> {
    pub fn new(kind: EnergyKind<T>, dim: usize, reference: ReferenceGeometry<T>) -> Result<Self> {
        if !kind.is_toy() {
            return Err(invalid(format!("{} is not a toy energy", kind.name())));
        }
        if let EnergyKind::LSpin { target_angle } = kind {
            if !target_angle.is_finite() {
                return Err(invalid("target angle must be finite"));
            }
        }
        Ok(Self { kind, dim, reference })
    }

    fn eval(&self, positions: &[T], mut grad: Option<&mut [T]>) -> T {
        let d = self.dim;
        let counted = &self.reference.counted;
        let n = counted.iter().filter(|&&c| c).count();
        if n == 0 {
            return T::zero();
        }
        let inv_n = T::one() / T::from_usize_lossy(n);
        let mut total = T::zero();
        for v in (0..positions.len() / d).filter(|&v| counted[v]) {
            let (x, y) = (positions[v * d], positions[v * d + 1]);
            let (value, gx, gy) = match self.kind {
                EnergyKind::LX => (x.abs(), sign(x), T::zero()),
                EnergyKind::LXY => (x.abs() + y.abs(), sign(x), sign(y)),
                EnergyKind::LSpin { target_angle } => {
                    let (x0, y0) = (self.reference.initial[v * d], self.reference.initial[v * d + 1]);
                    let r0 = x0.hypot(y0);
                    let r = x.hypot(y);
                    let (mut value, mut gx, mut gy) = (T::zero(), T::zero(), T::zero());
                    let dr = r - r0;
                    value = value + dr * dr;
                    if r > T::zero() {
                        let two = T::lit(2.0);
                        gx = two * dr * x / r;
                        gy = two * dr * y / r;
                        if r0 > T::zero() {
                            // Circular distance to the target turn.
                            let e = wrap_angle(target_angle - (y.atan2(x) - y0.atan2(x0)));
                            value = value + e * e;
                            // d(theta)/dx = -y / r^2, d(theta)/dy = x / r^2
                            let r2 = r * r;
                            gx = gx + two * e * y / r2;
                            gy = gy - two * e * x / r2;
                        }
                    }
                    (value, gx, gy)
                }
                _ => unreachable!("checked in ToyObjective::new"),
            };
            total = total + value;
            if let Some(g) = grad.as_deref_mut() {
                g[v * d] = g[v * d] + gx * inv_n;
                g[v * d + 1] = g[v * d + 1] + gy * inv_n;
            }
        }
        total * inv_n
    }
}

impl<T: Real> Objective<T> for ToyObjective<T> {
    fn value(&self, positions: &[T]) -> T {
        self.eval(positions, None)
    }

    fn value_and_gradient(&mut self, positions: &[T], grad: &mut [T]) -> T {
        self.eval(positions, Some(grad))
    }
}

/// Evaluates a toy loss on `positions`.
pub fn eval_toy<T: Real>(kind: EnergyKind<T>, positions: &[T], dim: usize, reference: &ReferenceGeometry<T>) -> Result<T> {
    Ok(ToyObjective::new(kind, dim, reference.clone())?.value(positions))
}

/// Distortion energies of a UV layout against its 3D rest mesh.
#[derive(Clone, Debug)]
pub struct UvObjective<T> {
    kind: EnergyKind<T>,
    triangles: Vec<[usize; 3]>,
    reference: ReferenceGeometry<T>,
}

impl<T: Real> UvObjective<T> {
    pub fn new(kind: EnergyKind<T>, triangles: Vec<[usize; 3]>, reference: ReferenceGeometry<T>) -> Result<Self> {
        if !kind.is_uv() {
            return Err(invalid(format!("{} is not a UV energy", kind.name())));
        }
        if reference.areas3d.len() != triangles.len() {
            return Err(invalid("reference geometry does not match the triangle list"));
        }
        Ok(Self { kind, triangles, reference })
    }

    pub fn kind(&self) -> EnergyKind<T> {
        self.kind
    }

    fn corners(&self, positions: &[T], t: usize) -> [[T; 2]; 3] {
        self.triangles[t].map(|v| [positions[2 * v], positions[2 * v + 1]])
    }

    fn scatter(&self, t: usize, g: [[T; 2]; 3], scale: T, grad: &mut [T]) {
        for (k, &v) in self.triangles[t].iter().enumerate() {
            grad[2 * v] = grad[2 * v] + scale * g[k][0];
            grad[2 * v + 1] = grad[2 * v + 1] + scale * g[k][1];
        }
    }

    fn eval(&self, positions: &[T], mut grad: Option<&mut [T]>) -> T {
        let nt = self.triangles.len();
        if nt == 0 {
            return T::zero();
        }
        let inv_t = T::one() / T::from_usize_lossy(nt);
        match self.kind {
            EnergyKind::AnglePreserving | EnergyKind::Equilateral => {
                let third = T::FRAC_PI_3();
                let inv = T::one() / T::from_usize_lossy(3 * nt);
                let mut total = T::zero();
                for t in 0..nt {
                    let p = self.corners(positions, t);
                    for k in 0..3 {
                        let (theta, g) = corner_angle(p, k);
                        let goal = match self.kind {
                            EnergyKind::AnglePreserving => self.reference.angles3d[t][k],
                            _ => third,
                        };
                        let e = theta - goal;
                        if e.abs() <= T::lit(ANGLE_TOL) {
                            continue;
                        }
                        total = total + e.abs();
                        if let Some(out) = grad.as_deref_mut() {
                            self.scatter(t, g, sign(e) * inv, out);
                        }
                    }
                }
                total * inv
            }
            EnergyKind::AreaPreserving | EnergyKind::Equiareal => {
                let ratio = matches!(self.kind, EnergyKind::AreaPreserving);
                // Equiareal areas are in units of the mean triangle area of the unit disk.
                let unit = T::from_usize_lossy(nt) / T::lit(std::f64::consts::PI);
                let mut q = Vec::with_capacity(nt);
                let mut dq = Vec::with_capacity(nt);
                for t in 0..nt {
                    let (a, g) = area_and_gradient(self.corners(positions, t));
                    let s = if ratio { T::one() / self.reference.areas3d[t] } else { unit };
                    q.push(a * s);
                    dq.push((g, s));
                }
                let mean = q.iter().copied().sum::<T>() * inv_t;
                let var = q.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() * inv_t;
                if let Some(out) = grad.as_deref_mut() {
                    let two = T::lit(2.0);
                    for (t, (g, s)) in dq.into_iter().enumerate() {
                        self.scatter(t, g, two * (q[t] - mean) * inv_t * s, out);
                    }
                }
                var
            }
            EnergyKind::SymmetricDirichlet => {
                let mut total = T::zero();
                for t in 0..nt {
                    let rinv = &self.reference.rest_inverse[t];
                    let area = self.reference.areas3d[t];
                    let u = self.corners(positions, t);
                    let j = uv_jacobian(rinv, u);
                    let f = j.iter().map(|&x| x * x).sum::<T>();
                    let det = j[0] * j[3] - j[1] * j[2];
                    if det == T::zero() {
                        return T::infinity();
                    }
                    let det2 = det * det;
                    total = total + area * (f + f / det2);
                    if let Some(out) = grad.as_deref_mut() {
                        let two = T::lit(2.0);
                        let a = area * two * (T::one() + T::one() / det2);
                        let b = area * two * f / (det2 * det);
                        // dE/dJ = a J - b cof(J)
                        let cof = [j[3], -j[2], -j[1], j[0]];
                        let dj: Vec<T> = (0..4).map(|i| a * j[i] - b * cof[i]).collect();
                        // dE/dD = dE/dJ * Rinv^T
                        let dd = [
                            dj[0] * rinv[0] + dj[1] * rinv[1],
                            dj[0] * rinv[2] + dj[1] * rinv[3],
                            dj[2] * rinv[0] + dj[3] * rinv[1],
                            dj[2] * rinv[2] + dj[3] * rinv[3],
                        ];
                        let g1 = [dd[0], dd[2]];
                        let g2 = [dd[1], dd[3]];
                        let g0 = [-(g1[0] + g2[0]), -(g1[1] + g2[1])];
                        self.scatter(t, [g0, g1, g2], inv_t, out);
                    }
                }
                total * inv_t
            }
            _ => unreachable!("checked in UvObjective::new"),
        }
    }
}

impl<T: Real> Objective<T> for UvObjective<T> {
    fn value(&self, positions: &[T]) -> T {
        self.eval(positions, None)
    }

    fn value_and_gradient(&mut self, positions: &[T], grad: &mut [T]) -> T {
        self.eval(positions, Some(grad))
    }
}

/// Evaluates a UV energy for `uv` (flat, stride 2) against the rest mesh.
pub fn eval_uv_energy<T: Real>(
    kind: EnergyKind<T>,
    triangles: &[[usize; 3]],
    reference: &ReferenceGeometry<T>,
    uv: &[T],
) -> Result<T> {
    Ok(UvObjective::new(kind, triangles.to_vec(), reference.clone())?.value(uv))
}

/// `-(d - d_hat)^2 ln(d / d_hat)` below the threshold, zero above, infinite
/// for non-positive `d`.
pub fn ipc_barrier<T: Real>(d: T, d_hat: T) -> T {
    if d >= d_hat {
        T::zero()
    } else if d > T::zero() {
        let e = d - d_hat;
        -(e * e) * (d / d_hat).ln()
    } else {
        T::infinity()
    }
}

/// Derivative of [`ipc_barrier`] with respect to `d` (for `d > 0`).
pub fn ipc_barrier_derivative<T: Real>(d: T, d_hat: T) -> T {
    if d >= d_hat || !(d > T::zero()) {
        T::zero()
    } else {
        let e = d - d_hat;
        -T::lit(2.0) * e * (d / d_hat).ln() - e * e / d
    }
}

fn simplex_barrier<T: Real>(m: T, spec: &BarrierSpec<T>) -> (T, T) {
    let two_hat = T::lit(2.0) * spec.d_hat;
    let mut value = ipc_barrier(m, spec.d_hat);
    let mut slope = ipc_barrier_derivative(m, spec.d_hat);
    if m < two_hat {
        value = value + spec.linear_scale * (two_hat - m);
        slope = slope - spec.linear_scale;
    }
    (value, slope)
}

/// Sum of barrier terms over every simplex of `complex` at `positions`.
pub fn barrier_energy<T: Real>(complex: &SimplicialComplex<T>, positions: &[T], spec: &BarrierSpec<T>) -> T {
    if !spec.enabled {
        return T::zero();
    }
    (0..complex.simplex_count())
        .map(|s| simplex_barrier(complex.measure(s, positions), spec).0)
        .fold(T::zero(), |a, b| a + b)
}

/// Barrier value with its gradient added into `grad`.
pub fn barrier_value_and_gradient<T: Real>(
    complex: &SimplicialComplex<T>,
    positions: &[T],
    spec: &BarrierSpec<T>,
    grad: &mut [T],
) -> T {
    accumulate_barrier(complex, positions, spec, grad, false)
}

/// Like [`barrier_value_and_gradient`], but simplices with non-positive
/// measure contribute only the linear term, so infeasible proposals still
/// get a finite gradient pointing back toward positive measure.
pub fn barrier_penalty_and_gradient<T: Real>(
    complex: &SimplicialComplex<T>,
    positions: &[T],
    spec: &BarrierSpec<T>,
    grad: &mut [T],
) -> T {
    accumulate_barrier(complex, positions, spec, grad, true)
}

fn accumulate_barrier<T: Real>(
    complex: &SimplicialComplex<T>,
    positions: &[T],
    spec: &BarrierSpec<T>,
    grad: &mut [T],
    extend: bool,
) -> T {
    if !spec.enabled {
        return T::zero();
    }
    let mut total = T::zero();
    for s in 0..complex.simplex_count() {
        let m = complex.measure(s, positions);
        let (mut value, slope) = simplex_barrier(m, spec);
        if extend && !(m > T::zero()) {
            value = spec.linear_scale * (T::lit(2.0) * spec.d_hat - m);
        }
        total = total + value;
        if slope != T::zero() && value.is_finite() {
            complex.accumulate_measure_gradient(s, positions, slope, grad);
        }
    }
    total
}

/// Loss, barrier and raw-weight gradient of one masked forward step.
#[derive(Clone, Debug)]
pub struct StepGradient<T> {
    pub loss: T,
    pub barrier: T,
    /// Positions after the forward step and boundary projection.
    pub positions: Vec<T>,
    /// Same layout as the raw weights; zero outside the active vertices.
    pub raw_grad: Vec<T>,
}

impl<T: Real> StepGradient<T> {
    pub fn total(&self) -> T {
        self.loss + self.barrier
    }
}

/// Gradient of `loss + barrier` after moving `active` to their convex sums
/// over `positions`, with respect to the raw weights of `active`.
///
/// Vertices listed in `frozen` keep their `positions` entry and receive no
/// gradient.
#[allow(clippy::too_many_arguments)]
pub fn energy_gradient_masked<T: Real>(
    objective: &mut dyn Objective<T>,
    barrier: &BarrierSpec<T>,
    complex: &SimplicialComplex<T>,
    constraints: &BoundaryConstraint<T>,
    weights: &DifferentialWeights<T>,
    positions: &[T],
    active: &[usize],
    frozen: &[bool],
) -> Result<StepGradient<T>> {
    let dim = complex.dim();
    let mut pre = vec![T::zero(); active.len() * dim];
    let mut moved = positions.to_vec();
    for (i, &v) in active.iter().enumerate() {
        if frozen.get(v).copied().unwrap_or(false) {
            continue;
        }
        let p = &mut pre[i * dim..(i + 1) * dim];
        convex_sum(complex, weights, v, positions, p)?;
        let q = &mut moved[v * dim..(v + 1) * dim];
        q.copy_from_slice(p);
        constraints.apply_vertex(v, q)?;
    }
    let mut grad = vec![T::zero(); moved.len()];
    let loss = objective.value_and_gradient(&moved, &mut grad);
    let bar = barrier_value_and_gradient(complex, &moved, barrier, &mut grad);
    if !(loss + bar).is_finite() {
        return Err(Error::GradientUndefined);
    }
    let mut raw_grad = vec![T::zero(); weights.raw().len()];
    for (i, &v) in active.iter().enumerate() {
        if frozen.get(v).copied().unwrap_or(false) {
            continue;
        }
        let g = &mut grad[v * dim..(v + 1) * dim];
        constraints.pullback_vertex(v, &pre[i * dim..(i + 1) * dim], g);
        pullback_vertex(complex, weights, v, positions, g, &mut raw_grad)?;
    }
    Ok(StepGradient { loss, barrier: bar, positions: moved, raw_grad })
}

/// [`energy_gradient_masked`] with nothing frozen.
pub fn energy_gradient<T: Real>(
    objective: &mut dyn Objective<T>,
    barrier: &BarrierSpec<T>,
    complex: &SimplicialComplex<T>,
    constraints: &BoundaryConstraint<T>,
    weights: &DifferentialWeights<T>,
    positions: &[T],
    active: &[usize],
) -> Result<StepGradient<T>> {
    energy_gradient_masked(objective, barrier, complex, constraints, weights, positions, active, &[])
}

/// Value of `loss + barrier` after the same masked forward step, without
/// gradients. Used by finite-difference checks and line searches.
pub fn energy_after_step<T: Real>(
    objective: &dyn Objective<T>,
    barrier: &BarrierSpec<T>,
    complex: &SimplicialComplex<T>,
    constraints: &BoundaryConstraint<T>,
    weights: &DifferentialWeights<T>,
    positions: &[T],
    active: &[usize],
) -> Result<T> {
    let moved = crate::diffrep::forward_vertices(complex, weights, constraints, active, positions)?;
    Ok(objective.value(&moved) + barrier_energy(complex, &moved, barrier))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coloring::grid_parity_coloring;
    use crate::complex::build_grid;
    use crate::diffrep::WeightMode;
    use approx::assert_relative_eq;

    fn flat(p: [[f64; 2]; 3]) -> Vec<f64> {
        p.iter().flatten().copied().collect()
    }

    #[test]
    fn toy_examples() {
        let bc = BoundaryConstraint::<f64>::free(1);
        let r = ReferenceGeometry::for_toy(&[0.3, 0.7], 2, &bc);
        assert_relative_eq!(eval_toy(EnergyKind::LX, &[0.3, 0.7], 2, &r).unwrap(), 0.3);
        assert_eq!(eval_toy(EnergyKind::LXY, &[0.0, 0.0], 2, &r).unwrap(), 0.0);
        assert!(eval_toy(EnergyKind::Equiareal, &[0.0, 0.0], 2, &r).is_err());
    }

    #[test]
    fn spin_at_initialization() {
        let (c, _, bc) = build_grid::<f64>(&[5, 5]).unwrap();
        let r = ReferenceGeometry::for_toy(c.positions(), 2, &bc);
        let value = eval_toy(EnergyKind::spin(), c.positions(), 2, &r).unwrap();
        // 21 counted vertices (25 minus 4 corners), one at the origin.
        let per = (175.0f64.to_radians()).powi(2);
        assert_relative_eq!(per, 9.328_5, epsilon = 1e-3);
        assert_relative_eq!(value, per * 20.0 / 21.0, epsilon = 1e-12);
    }

    #[test]
    fn spin_is_rotation_invariant() {
        let (c, _, bc) = build_grid::<f64>(&[4, 4]).unwrap();
        let mut moved = c.positions().to_vec();
        for (i, x) in moved.iter_mut().enumerate() {
            *x = *x * 0.8 + 0.03 * (i as f64).sin();
        }
        let rot = |p: &[f64], a: f64| -> Vec<f64> {
            p.chunks(2).flat_map(|q| [q[0] * a.cos() - q[1] * a.sin(), q[0] * a.sin() + q[1] * a.cos()]).collect()
        };
        let base = eval_toy(EnergyKind::spin(), &moved, 2, &ReferenceGeometry::for_toy(c.positions(), 2, &bc)).unwrap();
        for a in [0.3, 1.7, -2.5] {
            let r = ReferenceGeometry::for_toy(&rot(c.positions(), a), 2, &bc);
            let v = eval_toy(EnergyKind::spin(), &rot(&moved, a), 2, &r).unwrap();
            assert_relative_eq!(v, base, epsilon = 1e-9);
        }
    }

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(0.5), 0.5);
        assert_relative_eq!(wrap_angle(-4.0), 2.0 * PI - 4.0, epsilon = 1e-12);
    }

    #[test]
    fn triangle_quantity_examples() {
        let s3 = 3f64.sqrt();
        let q = triangle_quantities(&[&[0.0, 0.0][..], &[1.0, 0.0], &[0.5, s3 / 2.0]]);
        for a in q.angles {
            assert_relative_eq!(a, PI / 3.0, epsilon = 1e-12);
        }
        assert_relative_eq!(q.area, s3 / 4.0, epsilon = 1e-12);
        let q = triangle_quantities(&[&[0.0, 0.0, 0.0][..], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        assert_relative_eq!(q.angles[0], PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(q.angles[1], PI / 4.0, epsilon = 1e-12);
        assert_relative_eq!(q.angles[2], PI / 4.0, epsilon = 1e-12);
        assert_relative_eq!(q.area, 0.5);
        let q = triangle_quantities(&[&[0.0, 0.0][..], &[1.0, 1.0], &[2.0, 2.0]]);
        assert_eq!(q.area, 0.0);
        assert_relative_eq!(q.angles.iter().sum::<f64>(), PI, epsilon = 1e-12);
        let q = triangle_quantities(&[&[0.0, 0.0][..], &[0.0, 0.0], &[2.0, 2.0]]);
        assert!(q.degenerate);
        assert_eq!(q.area, 0.0);
        assert_relative_eq!(q.angles.iter().sum::<f64>(), PI);
    }

    #[test]
    fn singular_value_examples() {
        let rest = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let (a, b) = jacobian_singular_values(rest, [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_relative_eq!(a, 1.0, epsilon = 1e-12);
        assert_relative_eq!(b, 1.0, epsilon = 1e-12);
        let (a, b) = jacobian_singular_values(rest, [[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]]).unwrap();
        assert_relative_eq!(a, 3.0, epsilon = 1e-12);
        assert_relative_eq!(b, 3.0, epsilon = 1e-12);
        let (a, b) = jacobian_singular_values(rest, [[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_relative_eq!(a, 2.0, epsilon = 1e-12);
        assert_relative_eq!(b, 1.0, epsilon = 1e-12);
        // A tilted rest triangle mapped onto its own flattening.
        let tilted = [[0.0, 0.0, 0.0], [0.0, 0.6, 0.8], [1.0, 0.0, 0.0]];
        let (a, b) = jacobian_singular_values(tilted, [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_relative_eq!(a, 1.0, epsilon = 1e-12);
        assert_relative_eq!(b, 1.0, epsilon = 1e-12);
        assert!(jacobian_singular_values([[0.0; 3]; 3], [[0.0; 2]; 3]).is_err());
    }

    #[test]
    fn uv_energy_examples() {
        let rest = [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let tris = [[0, 1, 2]];
        let r = ReferenceGeometry::for_mesh(&rest, &tris).unwrap();
        let uv = flat([[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]]);
        assert_relative_eq!(eval_uv_energy(EnergyKind::AnglePreserving, &tris, &r, &uv).unwrap(), 0.0, epsilon = 1e-15);
        assert_relative_eq!(eval_uv_energy(EnergyKind::SymmetricDirichlet, &tris, &r, &uv).unwrap(), 4.0 * 1.0, epsilon = 1e-12);
        assert_eq!(eval_uv_energy(EnergyKind::Equiareal, &tris, &r, &uv).unwrap(), 0.0);
        let squashed = flat([[0.0, 0.0], [2.0, 0.0], [4.0, 0.0]]);
        assert!(eval_uv_energy(EnergyKind::SymmetricDirichlet, &tris, &r, &squashed).unwrap().is_infinite());
    }

    #[test]
    fn equilateral_zero_only_on_equilateral() {
        let s3 = 3f64.sqrt();
        let rest = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, s3 / 2.0, 0.0], [1.5, s3 / 2.0, 0.0]];
        let tris = [[0, 1, 2], [1, 3, 2]];
        let r = ReferenceGeometry::for_mesh(&rest, &tris).unwrap();
        let uv: Vec<f64> = rest.iter().flat_map(|p| [p[0], p[1]]).collect();
        assert!(eval_uv_energy(EnergyKind::Equilateral, &tris, &r, &uv).unwrap() < 1e-12);
        assert!(eval_uv_energy(EnergyKind::Equiareal, &tris, &r, &uv).unwrap() < 1e-15);
        let mut skew = uv.clone();
        skew[6] += 0.1;
        assert!(eval_uv_energy(EnergyKind::Equilateral, &tris, &r, &skew).unwrap() > 1e-3);
    }

    #[test]
    fn sym_dirichlet_invariances() {
        let rest = [[0.1, 0.0, 0.3], [1.0, 0.2, 0.0], [0.2, 0.9, 0.4]];
        let uv = [[0.0, 0.0], [1.3, 0.1], [0.4, 0.8]];
        let tris = [[0, 1, 2]];
        let r = ReferenceGeometry::for_mesh(&rest, &tris).unwrap();
        let base = eval_uv_energy(EnergyKind::SymmetricDirichlet, &tris, &r, &flat(uv)).unwrap();
        let a = 0.77f64;
        let rot = uv.map(|p| [p[0] * a.cos() - p[1] * a.sin(), p[0] * a.sin() + p[1] * a.cos()]);
        let v = eval_uv_energy(EnergyKind::SymmetricDirichlet, &tris, &r, &flat(rot)).unwrap();
        assert_relative_eq!(v, base, epsilon = 1e-12);
        let relabeled = [[1, 2, 0]];
        let r2 = ReferenceGeometry::for_mesh(&rest, &relabeled).unwrap();
        let v = eval_uv_energy(EnergyKind::SymmetricDirichlet, &relabeled, &r2, &flat(uv)).unwrap();
        assert_relative_eq!(v, base, epsilon = 1e-12);
    }

    #[test]
    fn barrier_examples() {
        let h = 1e-6;
        assert_eq!(ipc_barrier(h, h), 0.0);
        assert_eq!(ipc_barrier(2.0 * h, h), 0.0);
        assert_relative_eq!(ipc_barrier(h / 2.0, h), h * h / 4.0 * 2f64.ln(), epsilon = 1e-24);
        assert!(ipc_barrier(0.0, h).is_infinite());
        assert!(ipc_barrier(-1.0, h).is_infinite());
        // Continuity of the derivative at the threshold, monotone inside.
        assert!(ipc_barrier_derivative(h * (1.0 - 1e-9), h).abs() < 1e-20);
        let mut last = f64::INFINITY;
        for k in 1..100 {
            let v = ipc_barrier(h * k as f64 / 100.0, h);
            assert!(v >= 0.0 && v <= last);
            last = v;
        }
    }

    #[test]
    fn grid_barrier_is_zero_at_rest_and_squeezed_triangle_contributes() {
        let (c, _, _) = build_grid::<f64>(&[6, 5]).unwrap();
        let spec = BarrierSpec::for_image(5, 6);
        assert_eq!(barrier_energy(&c, c.positions(), &spec), 0.0);

        // One triangle squeezed to d_hat / 2.
        let d_hat = 1e-3;
        let spec = BarrierSpec { enabled: true, d_hat, linear_scale: 0.5 };
        let positions = vec![0.0, 0.0, 1.0, 0.0, 0.0, d_hat];
        let tri = SimplicialComplex::from_triangles(positions, &[[0, 1, 2]]).unwrap();
        let expected = d_hat * d_hat / 4.0 * 2f64.ln() + 0.5 * 1.5 * d_hat;
        assert_relative_eq!(barrier_energy(&tri, tri.positions(), &spec), expected, epsilon = 1e-15);
        let flipped = vec![0.0, 0.0, 1.0, 0.0, 0.0, -d_hat];
        assert!(barrier_energy(&tri, &flipped, &spec).is_infinite());
    }

    #[test]
    fn lx_gradient_vanishes_at_symmetric_optimum() {
        let (c, topo, bc) = build_grid::<f64>(&[3, 3]).unwrap();
        let w = DifferentialWeights::new(&c, WeightMode::PerVertex);
        let mut obj = ToyObjective::new(EnergyKind::LX, 2, ReferenceGeometry::for_toy(c.positions(), 2, &bc)).unwrap();
        let coloring = grid_parity_coloring(&topo);
        let center = topo.index(&[1, 1]);
        let active: Vec<usize> = coloring.members(coloring.color(center)).to_vec();
        let g = energy_gradient(&mut obj, &BarrierSpec::default(), &c, &bc, &w, c.positions(), &active).unwrap();
        for x in &g.raw_grad[w.vertex_range(center)] {
            assert_eq!(*x, 0.0);
        }
    }
}
