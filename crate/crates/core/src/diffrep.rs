//! Differential vertex representation.
//!
//! Each vertex stores one raw weight per neighbor (or per neighbor and axis).
//! Raw weights pass through softplus and are normalized per vertex, so the
//! vertex is a convex combination of its current neighbor positions.

use std::ops::Range;

use rand::Rng;

use crate::coloring::VertexColoring;
use crate::complex::{apply_boundary, BoundaryConstraint, SimplicialComplex};
use crate::error::{invalid, Error, Result};
use crate::scalar::{sigmoid, softplus, softplus_inv, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WeightMode {
    /// One weight per neighbor, shared by all axes.
    PerVertex,
    /// One weight per neighbor and axis.
    PerDimension,
}

/// Raw (unconstrained) weights stored sparsely along the adjacency lists.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferentialWeights<T> {
    mode: WeightMode,
    dim: usize,
    offsets: Vec<usize>,
    raw: Vec<T>,
}

impl<T: Real> DifferentialWeights<T> {
    /// Every adjacency entry starts at raw weight 1.
    pub fn new(complex: &SimplicialComplex<T>, mode: WeightMode) -> Self {
        let dim = complex.dim();
        let mut offsets = Vec::with_capacity(complex.vertex_count() + 1);
        offsets.push(0);
        for v in 0..complex.vertex_count() {
            offsets.push(offsets[v] + complex.neighbors(v).len());
        }
        let stride = if mode == WeightMode::PerDimension { dim } else { 1 };
        let raw = vec![T::one(); offsets[complex.vertex_count()] * stride];
        Self { mode, dim, offsets, raw }
    }

    /// Like [`new`](Self::new) with every raw weight jittered uniformly in
    /// `[-amplitude, amplitude]`.
    pub fn with_jitter<R: Rng>(complex: &SimplicialComplex<T>, mode: WeightMode, amplitude: f64, rng: &mut R) -> Self {
        let mut w = Self::new(complex, mode);
        if amplitude > 0.0 {
            for r in &mut w.raw {
                *r = *r + T::lit(rng.gen_range(-amplitude..=amplitude));
            }
        }
        w
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Raw entries per neighbor: 1 or `dim`.
    pub fn stride(&self) -> usize {
        match self.mode {
            WeightMode::PerVertex => 1,
            WeightMode::PerDimension => self.dim,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn raw(&self) -> &[T] {
        &self.raw
    }

    pub fn raw_mut(&mut self) -> &mut [T] {
        &mut self.raw
    }

    /// Range of `raw` owned by vertex `v`, laid out `[neighbor * stride + axis]`.
    pub fn vertex_range(&self, v: usize) -> Range<usize> {
        let s = self.stride();
        self.offsets[v] * s..self.offsets[v + 1] * s
    }

    pub fn vertex_raw(&self, v: usize) -> &[T] {
        &self.raw[self.vertex_range(v)]
    }

    pub fn set_vertex_raw(&mut self, v: usize, values: &[T]) -> Result<()> {
        let range = self.vertex_range(v);
        if values.len() != range.len() {
            return Err(invalid(format!("vertex {v} expects {} raw weights", range.len())));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(invalid("raw weights must be finite"));
        }
        self.raw[range].copy_from_slice(values);
        Ok(())
    }

    /// Convex coefficients of vertex `v`, same layout as its raw slice.
    pub fn normalize(&self, v: usize) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.vertex_range(v).len()];
        self.normalize_into(v, &mut out)?;
        Ok(out)
    }

    fn normalize_into(&self, v: usize, out: &mut [T]) -> Result<()> {
        let raw = self.vertex_raw(v);
        let s = self.stride();
        if raw.is_empty() {
            return Err(invalid(format!("vertex {v} has no neighbors")));
        }
        let deg = raw.len() / s;
        for a in 0..s {
            let mut total = T::zero();
            for k in 0..deg {
                let sp = softplus(raw[k * s + a]);
                out[k * s + a] = sp;
                total = total + sp;
            }
            let total = total.max(denominator_floor());
            for k in 0..deg {
                out[k * s + a] = out[k * s + a] / total;
            }
        }
        Ok(())
    }
}

#[inline]
fn denominator_floor<T: Real>() -> T {
    T::lit(1e-300).max(T::min_positive_value())
}

/// Writes the unconstrained convex-sum position of `v` into `out` (len dim).
pub fn convex_sum<T: Real>(
    complex: &SimplicialComplex<T>,
    weights: &DifferentialWeights<T>,
    v: usize,
    positions: &[T],
    out: &mut [T],
) -> Result<()> {
    let dim = complex.dim();
    let nbrs = complex.neighbors(v);
    let coeffs = weights.normalize(v)?;
    let s = weights.stride();
    for (a, o) in out.iter_mut().enumerate().take(dim) {
        let col = if s == 1 { 0 } else { a };
        *o = nbrs
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (k, &j)| acc + coeffs[k * s + col] * positions[j * dim + a]);
    }
    Ok(())
}

/// Moves every vertex of `active` to its convex sum over `positions`, then
/// applies `constraints` to those vertices. Other vertices are copied as is.
pub fn forward_vertices<T: Real>(
    complex: &SimplicialComplex<T>,
    weights: &DifferentialWeights<T>,
    constraints: &BoundaryConstraint<T>,
    active: &[usize],
    positions: &[T],
) -> Result<Vec<T>> {
    let dim = complex.dim();
    let mut out = positions.to_vec();
    let mut p = vec![T::zero(); dim];
    for &v in active {
        convex_sum(complex, weights, v, positions, &mut p)?;
        constraints.apply_vertex(v, &mut p)?;
        out[v * dim..(v + 1) * dim].copy_from_slice(&p);
    }
    Ok(out)
}

/// One masked forward step: vertices of `active_color` become convex sums of
/// their neighbors, everything else is copied, then boundaries are enforced.
pub fn forward_positions<T: Real>(
    complex: &SimplicialComplex<T>,
    weights: &DifferentialWeights<T>,
    coloring: &VertexColoring,
    active_color: Option<usize>,
    constraints: &BoundaryConstraint<T>,
    positions: &[T],
) -> Result<Vec<T>> {
    let active = active_color.map_or(&[][..], |c| coloring.members(c));
    let mut out = forward_vertices(complex, weights, constraints, active, positions)?;
    apply_boundary(&mut out, complex.dim(), constraints)?;
    Ok(out)
}

/// Accumulates `dE/d raw` for vertex `v` given `grad` = `dE/dp` with respect
/// to its unconstrained convex-sum position.
pub fn pullback_vertex<T: Real>(
    complex: &SimplicialComplex<T>,
    weights: &DifferentialWeights<T>,
    v: usize,
    positions: &[T],
    grad: &[T],
    raw_grad: &mut [T],
) -> Result<()> {
    let dim = complex.dim();
    let nbrs = complex.neighbors(v);
    let s = weights.stride();
    let range = weights.vertex_range(v);
    let raw = &weights.raw()[range.clone()];
    let coeffs = weights.normalize(v)?;
    let out = &mut raw_grad[range];
    if s == 1 {
        let mut total = T::zero();
        for &r in raw {
            total = total + softplus(r);
        }
        let total = total.max(denominator_floor());
        let mut p = vec![T::zero(); dim];
        for (k, &j) in nbrs.iter().enumerate() {
            for a in 0..dim {
                p[a] = p[a] + coeffs[k] * positions[j * dim + a];
            }
        }
        for (k, &j) in nbrs.iter().enumerate() {
            let dot = (0..dim).fold(T::zero(), |acc, a| acc + grad[a] * (positions[j * dim + a] - p[a]));
            out[k] = out[k] + sigmoid(raw[k]) / total * dot;
        }
    } else {
        let deg = nbrs.len();
        for a in 0..dim {
            let mut total = T::zero();
            let mut p = T::zero();
            for k in 0..deg {
                total = total + softplus(raw[k * s + a]);
                p = p + coeffs[k * s + a] * positions[nbrs[k] * dim + a];
            }
            let total = total.max(denominator_floor());
            for (k, &j) in nbrs.iter().enumerate() {
                out[k * s + a] = out[k * s + a] + sigmoid(raw[k * s + a]) / total * grad[a] * (positions[j * dim + a] - p);
            }
        }
    }
    Ok(())
}

/// Raw weights for `vertex` whose convex sum over its current neighbors
/// reproduces `target`. Fails when `target` is not strictly inside the hull.
pub fn fit_weights_to_positions<T: Real>(
    complex: &SimplicialComplex<T>,
    weights: &DifferentialWeights<T>,
    vertex: usize,
    target: &[T],
) -> Result<Vec<T>> {
    let dim = complex.dim();
    let nbrs = complex.neighbors(vertex);
    let m = nbrs.len();
    if m == 0 {
        return Err(invalid(format!("vertex {vertex} has no neighbors")));
    }
    let pts: Vec<&[T]> = nbrs.iter().map(|&j| complex.point(j)).collect();
    let inv_m = T::one() / T::from_usize_lossy(m);
    let centroid: Vec<T> = (0..dim)
        .map(|a| pts.iter().fold(T::zero(), |acc, p| acc + p[a]) * inv_m)
        .collect();
    let scale = pts
        .iter()
        .flat_map(|p| p.iter().zip(&centroid).map(|(&x, &c)| (x - c).abs()))
        .fold(T::zero(), T::max);
    let offset = target
        .iter()
        .zip(&centroid)
        .fold(T::zero(), |acc, (&t, &c)| acc.max((t - c).abs()));

    let coeffs: Vec<T> = if offset <= T::lit(1e-14) * (T::one() + scale) {
        vec![inv_m; m]
    } else {
        // Write target = (1 - e) t' + e * centroid with t' inside a simplex of
        // ring points; blending with uniform weights keeps every coefficient
        // strictly positive.
        let mut found = None;
        let mut eps = 0.9;
        while eps > 1e-12 && found.is_none() {
            let e = T::lit(eps);
            let shifted: Vec<T> = target
                .iter()
                .zip(&centroid)
                .map(|(&t, &c)| (t - e * c) / (T::one() - e))
                .collect();
            found = enclosing_simplex(&pts, &shifted).map(|bary| (e, bary));
            eps *= 0.5;
        }
        let (e, bary) = found.ok_or(Error::Infeasible { vertex })?;
        let mut c = vec![e * inv_m; m];
        for (k, b) in bary {
            c[k] = c[k] + (T::one() - e) * b;
        }
        c
    };

    let s = weights.stride();
    let m_t = T::from_usize_lossy(m);
    let mut raw = Vec::with_capacity(m * s);
    for c in &coeffs {
        if !(*c > T::zero()) {
            return Err(Error::Infeasible { vertex });
        }
        let r = softplus_inv(*c * m_t);
        raw.extend(std::iter::repeat(r).take(s));
    }

    let mut probe = weights.clone();
    probe.set_vertex_raw(vertex, &raw)?;
    let mut p = vec![T::zero(); dim];
    convex_sum(complex, &probe, vertex, complex.positions(), &mut p)?;
    let err = p.iter().zip(target).fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()));
    if err > T::lit(1e-8) {
        return Err(Error::Infeasible { vertex });
    }
    Ok(raw)
}

/// Finds `dim + 1` ring points whose simplex contains `target`; returns
/// `(ring index, barycentric coordinate)` pairs.
fn enclosing_simplex<T: Real>(pts: &[&[T]], target: &[T]) -> Option<Vec<(usize, T)>> {
    let dim = target.len();
    let m = pts.len();
    let mut idx = vec![0usize; dim + 1];
    // Enumerate increasing index tuples.
    fn next(idx: &mut [usize], m: usize) -> bool {
        let k = idx.len();
        for i in (0..k).rev() {
            if idx[i] < m - (k - i) {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                return true;
            }
        }
        false
    }
    if m < dim + 1 {
        return None;
    }
    for (i, x) in idx.iter_mut().enumerate() {
        *x = i;
    }
    loop {
        if let Some(b) = barycentric(pts, &idx, target) {
            if b.iter().all(|&x| x >= T::zero()) {
                return Some(idx.iter().copied().zip(b).collect());
            }
        }
        if !next(&mut idx, m) {
            return None;
        }
    }
}

/// Barycentric coordinates of `target` in the simplex `pts[idx]`, or `None`
/// when the simplex is degenerate.
fn barycentric<T: Real>(pts: &[&[T]], idx: &[usize], target: &[T]) -> Option<Vec<T>> {
    let dim = target.len();
    let base = pts[idx[0]];
    // Columns: pts[idx[k]] - base for k = 1..=dim.
    let mut a = vec![vec![T::zero(); dim + 1]; dim];
    for r in 0..dim {
        for c in 0..dim {
            a[r][c] = pts[idx[c + 1]][r] - base[r];
        }
        a[r][dim] = target[r] - base[r];
    }
    for col in 0..dim {
        let piv = (col..dim).max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())?;
        if a[piv][col].abs() < T::lit(1e-14) {
            return None;
        }
        a.swap(col, piv);
        for r in 0..dim {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=dim {
                    a[r][c] = a[r][c] - f * a[col][c];
                }
            }
        }
    }
    let mut b = vec![T::zero(); dim + 1];
    for r in 0..dim {
        b[r + 1] = a[r][dim] / a[r][r];
    }
    b[0] = T::one() - b[1..].iter().copied().fold(T::zero(), |x, y| x + y);
    Some(b)
}
