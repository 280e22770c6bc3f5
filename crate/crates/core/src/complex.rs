//! Grids and triangle meshes as oriented simplicial complexes.
//!
//! A [`SimplicialComplex`] stores vertex positions, the oriented simplices
//! whose signed measures must stay positive, optional lattice cells, and the
//! per-vertex neighbor lists that the differential representation sums over.
//! For grids the neighbor lists are the lattice neighbors (4 in 2D, 6 in 3D)
//! while the simplices come from subdividing every cell; the two are
//! deliberately different structures.

use crate::error::{invalid, Error, Result};
use crate::scalar::{Real, EPS_MEASURE};

#[derive(Clone, Debug)]
pub struct SimplicialComplex<T> {
    dim: usize,
    positions: Vec<T>,
    simplices: Vec<usize>,
    cells: Vec<usize>,
    adjacency: Vec<Vec<usize>>,
    incident: Vec<Vec<usize>>,
}

impl<T: Real> SimplicialComplex<T> {
    /// Assembles a complex from raw parts.
    ///
    /// `positions` is flat with stride `dim`, `simplices` flat with stride
    /// `dim + 1`, `cells` flat with stride `2^dim` (may be empty).
    pub fn from_parts(
        dim: usize,
        positions: Vec<T>,
        simplices: Vec<usize>,
        cells: Vec<usize>,
        adjacency: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(invalid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if positions.len() % dim != 0 {
            return Err(invalid("position buffer length is not a multiple of dim"));
        }
        let n = positions.len() / dim;
        if adjacency.len() != n {
            return Err(invalid("adjacency length differs from vertex count"));
        }
        if simplices.len() % (dim + 1) != 0 || cells.len() % (1 << dim) != 0 {
            return Err(invalid("simplex or cell buffer has the wrong stride"));
        }
        if let Some(&bad) = simplices.iter().chain(cells.iter()).find(|&&v| v >= n) {
            return Err(invalid(format!("vertex index {bad} out of range ({n} vertices)")));
        }
        for (i, nbrs) in adjacency.iter().enumerate() {
            for &j in nbrs {
                if j >= n || j == i || !adjacency[j].contains(&i) {
                    return Err(invalid(format!("adjacency is not symmetric at ({i}, {j})")));
                }
            }
        }
        let mut incident = vec![Vec::new(); n];
        for (s, simplex) in simplices.chunks_exact(dim + 1).enumerate() {
            for &v in simplex {
                incident[v].push(s);
            }
        }
        Ok(Self { dim, positions, simplices, cells, adjacency, incident })
    }

    /// Builds a 2D triangle complex; neighbor lists come from triangle edges,
    /// sorted counter-clockwise by angle in the given layout.
    pub fn from_triangles(positions: Vec<T>, triangles: &[[usize; 3]]) -> Result<Self> {
        let n = positions.len() / 2;
        let mut adjacency = vec![Vec::new(); n];
        for tri in triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                if a >= n || b >= n {
                    return Err(invalid(format!("triangle references vertex {} of {n}", a.max(b))));
                }
                if !adjacency[a].contains(&b) {
                    adjacency[a].push(b);
                    adjacency[b].push(a);
                }
            }
        }
        for (i, nbrs) in adjacency.iter_mut().enumerate() {
            let (cx, cy) = (positions[2 * i], positions[2 * i + 1]);
            nbrs.sort_by(|&a, &b| {
                let ta = (positions[2 * a + 1] - cy).atan2(positions[2 * a] - cx);
                let tb = (positions[2 * b + 1] - cy).atan2(positions[2 * b] - cx);
                ta.partial_cmp(&tb).unwrap_or(std::cmp::Ordering::Equal)
            });
        }
        let simplices = triangles.iter().flatten().copied().collect();
        Self::from_parts(2, positions, simplices, Vec::new(), adjacency)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn positions(&self) -> &[T] {
        &self.positions
    }

    pub fn positions_mut(&mut self) -> &mut [T] {
        &mut self.positions
    }

    pub fn set_positions(&mut self, positions: Vec<T>) {
        assert_eq!(positions.len(), self.positions.len());
        self.positions = positions;
    }

    pub fn point(&self, v: usize) -> &[T] {
        &self.positions[v * self.dim..(v + 1) * self.dim]
    }

    pub fn simplex_count(&self) -> usize {
        self.simplices.len() / (self.dim + 1)
    }

    pub fn simplex(&self, s: usize) -> &[usize] {
        let k = self.dim + 1;
        &self.simplices[s * k..(s + 1) * k]
    }

    pub fn simplices(&self) -> impl Iterator<Item = &[usize]> {
        self.simplices.chunks_exact(self.dim + 1)
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len() >> self.dim
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        let k = 1 << self.dim;
        &self.cells[c * k..(c + 1) * k]
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    pub fn incident_simplices(&self, v: usize) -> &[usize] {
        &self.incident[v]
    }

    /// Signed area (2D) or volume (3D) of simplex `s` under `positions`.
    pub fn measure(&self, s: usize, positions: &[T]) -> T {
        let d = self.dim;
        let p = |v: usize| &positions[v * d..(v + 1) * d];
        let ids = self.simplex(s);
        if d == 2 {
            signed_area(pt2(p(ids[0])), pt2(p(ids[1])), pt2(p(ids[2])))
        } else {
            signed_volume(pt3(p(ids[0])), pt3(p(ids[1])), pt3(p(ids[2])), pt3(p(ids[3])))
        }
    }

    /// Adds `scale * d(measure)/d(positions)` of simplex `s` into `grad`.
    pub fn accumulate_measure_gradient(&self, s: usize, positions: &[T], scale: T, grad: &mut [T]) {
        let d = self.dim;
        let ids = self.simplex(s);
        let p = |v: usize| &positions[v * d..(v + 1) * d];
        if d == 2 {
            let g = signed_area_gradient(pt2(p(ids[0])), pt2(p(ids[1])), pt2(p(ids[2])));
            for (k, &v) in ids.iter().enumerate() {
                grad[2 * v] = grad[2 * v] + scale * g[k][0];
                grad[2 * v + 1] = grad[2 * v + 1] + scale * g[k][1];
            }
        } else {
            let g = signed_volume_gradient(
                pt3(p(ids[0])),
                pt3(p(ids[1])),
                pt3(p(ids[2])),
                pt3(p(ids[3])),
            );
            for (k, &v) in ids.iter().enumerate() {
                for a in 0..3 {
                    grad[3 * v + a] = grad[3 * v + a] + scale * g[k][a];
                }
            }
        }
    }

    /// Whether every simplex has measure strictly above the threshold.
    pub fn is_injective(&self, positions: &[T]) -> bool {
        let eps = T::lit(EPS_MEASURE);
        (0..self.simplex_count()).all(|s| self.measure(s, positions) > eps)
    }
}

#[inline]
pub(crate) fn pt2<T: Real>(p: &[T]) -> [T; 2] {
    [p[0], p[1]]
}

#[inline]
pub(crate) fn pt3<T: Real>(p: &[T]) -> [T; 3] {
    [p[0], p[1], p[2]]
}

/// Half the z-component of `(b - a) x (c - a)`; positive for counter-clockwise.
#[inline]
pub fn signed_area<T: Real>(a: [T; 2], b: [T; 2], c: [T; 2]) -> T {
    let half = T::lit(0.5);
    half * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

/// Gradient of [`signed_area`] with respect to `a`, `b`, `c`.
#[inline]
pub fn signed_area_gradient<T: Real>(a: [T; 2], b: [T; 2], c: [T; 2]) -> [[T; 2]; 3] {
    let half = T::lit(0.5);
    [
        [half * (b[1] - c[1]), half * (c[0] - b[0])],
        [half * (c[1] - a[1]), half * (a[0] - c[0])],
        [half * (a[1] - b[1]), half * (b[0] - a[0])],
    ]
}

#[inline]
fn sub3<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn cross3<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// `(1/6) (v1 - v0) . ((v2 - v0) x (v3 - v0))`.
#[inline]
pub fn signed_volume<T: Real>(v0: [T; 3], v1: [T; 3], v2: [T; 3], v3: [T; 3]) -> T {
    let (a, b, c) = (sub3(v1, v0), sub3(v2, v0), sub3(v3, v0));
    let x = cross3(b, c);
    (a[0] * x[0] + a[1] * x[1] + a[2] * x[2]) / T::lit(6.0)
}

/// Gradient of [`signed_volume`] with respect to each of the four vertices.
pub fn signed_volume_gradient<T: Real>(v0: [T; 3], v1: [T; 3], v2: [T; 3], v3: [T; 3]) -> [[T; 3]; 4] {
    let (a, b, c) = (sub3(v1, v0), sub3(v2, v0), sub3(v3, v0));
    let sixth = T::lit(1.0 / 6.0);
    let g1 = cross3(b, c).map(|x| x * sixth);
    let g2 = cross3(c, a).map(|x| x * sixth);
    let g3 = cross3(a, b).map(|x| x * sixth);
    let g0 = [
        -(g1[0] + g2[0] + g3[0]),
        -(g1[1] + g2[1] + g3[1]),
        -(g1[2] + g2[2] + g3[2]),
    ];
    [g0, g1, g2, g3]
}

/// Splits a quad given as the CCW cycle `(i,j), (i+1,j), (i+1,j+1), (i,j+1)`
/// into the four triangles of both diagonals, all CCW on the undeformed quad.
pub fn subdivide_cell_2d(cell: [usize; 4]) -> [[usize; 3]; 4] {
    let [a, b, c, d] = cell;
    [[a, b, c], [a, c, d], [a, b, d], [b, c, d]]
}

/// Local corner indices of the ten tetrahedra of a cube.
///
/// Corners 0..4 are the bottom quad `(0,0,0) (1,0,0) (1,1,0) (0,1,0)` and
/// 4..8 the same quad at z = 1. The first five tets use the central tet on
/// the even-parity corners `{0, 2, 5, 7}` plus one corner tet per odd corner;
/// the last five mirror that choice around the odd corners `{1, 3, 4, 6}`.
pub const CUBE_TETS: [[usize; 4]; 10] = [
    [0, 5, 2, 7],
    [1, 2, 0, 5],
    [3, 0, 2, 7],
    [4, 5, 0, 7],
    [6, 2, 5, 7],
    [1, 3, 4, 6],
    [0, 1, 3, 4],
    [2, 3, 1, 6],
    [5, 1, 4, 6],
    [7, 4, 3, 6],
];

/// Splits a cube (two stacked CCW quads) into two 5-tet decompositions.
pub fn subdivide_cell_3d(cell: [usize; 8]) -> [[usize; 4]; 10] {
    CUBE_TETS.map(|t| t.map(|k| cell[k]))
}

/// Whether `candidate` lies strictly in the kernel of the fan `ring`.
///
/// Tests every fan triangle `(candidate, ring[k], ring[k+1])` for signed area
/// above the strictness threshold. A closed fan also tests the wrap-around
/// triangle, which makes this exactly strict kernel membership for a CCW ring.
pub fn in_kernel<T: Real>(candidate: [T; 2], ring: &[[T; 2]], closed: bool) -> Result<bool> {
    if ring.len() < 2 {
        return Err(invalid("one-ring needs at least two vertices"));
    }
    let eps = T::lit(EPS_MEASURE);
    let n = ring.len();
    let pairs = if closed { n } else { n - 1 };
    Ok((0..pairs).all(|k| signed_area(candidate, ring[k], ring[(k + 1) % n]) > eps))
}

/// Per-axis lattice of vertices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridTopology {
    resolution: Vec<usize>,
}

impl GridTopology {
    pub fn new(resolution: &[usize]) -> Result<Self> {
        if resolution.len() != 2 && resolution.len() != 3 {
            return Err(invalid(format!("grids must be 2D or 3D, got {} axes", resolution.len())));
        }
        if let Some(r) = resolution.iter().find(|&&r| r < 2) {
            return Err(invalid(format!("every axis needs at least 2 vertices, got {r}")));
        }
        Ok(Self { resolution: resolution.to_vec() })
    }

    pub fn dim(&self) -> usize {
        self.resolution.len()
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn vertex_count(&self) -> usize {
        self.resolution.iter().product()
    }

    /// Lattice coordinates to vertex index, x fastest.
    pub fn index(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.resolution)
            .rev()
            .fold(0, |acc, (&c, &r)| acc * r + c)
    }

    pub fn coords(&self, mut index: usize) -> Vec<usize> {
        self.resolution
            .iter()
            .map(|&r| {
                let c = index % r;
                index /= r;
                c
            })
            .collect()
    }

    pub fn is_boundary(&self, index: usize) -> bool {
        self.coords(index)
            .iter()
            .zip(&self.resolution)
            .any(|(&c, &r)| c == 0 || c + 1 == r)
    }
}

/// Constraint attached to one vertex.
#[derive(Clone, Debug, PartialEq)]
pub enum VertexConstraint<T> {
    Free,
    /// `(axis, value)` pairs held fixed.
    Pinned(Vec<(usize, T)>),
    OnUnitCircle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryConstraint<T> {
    kinds: Vec<VertexConstraint<T>>,
}

impl<T: Real> BoundaryConstraint<T> {
    pub fn new(kinds: Vec<VertexConstraint<T>>) -> Self {
        Self { kinds }
    }

    pub fn free(n: usize) -> Self {
        Self { kinds: vec![VertexConstraint::Free; n] }
    }

    pub fn kind(&self, v: usize) -> &VertexConstraint<T> {
        &self.kinds[v]
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    /// Whether every coordinate of `v` is fixed.
    pub fn fully_pinned(&self, v: usize, dim: usize) -> bool {
        matches!(&self.kinds[v], VertexConstraint::Pinned(axes) if axes.len() >= dim)
    }

    pub fn axis_pinned(&self, v: usize, axis: usize) -> bool {
        matches!(&self.kinds[v], VertexConstraint::Pinned(axes) if axes.iter().any(|&(a, _)| a == axis))
    }

    /// Enforces the constraint of one vertex in place.
    pub fn apply_vertex(&self, v: usize, p: &mut [T]) -> Result<()> {
        match &self.kinds[v] {
            VertexConstraint::Free => {}
            VertexConstraint::Pinned(axes) => {
                for &(a, value) in axes {
                    p[a] = value;
                }
            }
            VertexConstraint::OnUnitCircle => {
                let norm = p.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
                if !(norm > T::zero()) {
                    return Err(Error::DegenerateProjection { vertex: v });
                }
                for x in p.iter_mut() {
                    *x = *x / norm;
                }
            }
        }
        Ok(())
    }

    /// Turns the gradient with respect to constrained positions of `v` into
    /// the gradient with respect to its unconstrained position `pre`.
    pub fn pullback_vertex(&self, v: usize, pre: &[T], grad: &mut [T]) {
        match &self.kinds[v] {
            VertexConstraint::Free => {}
            VertexConstraint::Pinned(axes) => {
                for &(a, _) in axes {
                    grad[a] = T::zero();
                }
            }
            VertexConstraint::OnUnitCircle => {
                // d(p/|p|)/dp = (I - n n^T) / |p|
                let norm = pre.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
                if !(norm > T::zero()) {
                    grad.iter_mut().for_each(|g| *g = T::zero());
                    return;
                }
                let dot = pre.iter().zip(grad.iter()).fold(T::zero(), |acc, (&x, &g)| acc + x * g) / norm;
                for (g, &x) in grad.iter_mut().zip(pre) {
                    *g = (*g - dot * x / norm) / norm;
                }
            }
        }
    }
}

/// Restores pinned coordinates and reprojects circle vertices, in place.
pub fn apply_boundary<T: Real>(positions: &mut [T], dim: usize, constraints: &BoundaryConstraint<T>) -> Result<()> {
    for (v, p) in positions.chunks_exact_mut(dim).enumerate() {
        constraints.apply_vertex(v, p)?;
    }
    Ok(())
}

/// Uniform grid over `[-1, 1]^dim` with lattice adjacency, subdivided cells
/// and Dirichlet pins on every boundary face.
pub fn build_grid<T: Real>(
    resolution: &[usize],
) -> Result<(SimplicialComplex<T>, GridTopology, BoundaryConstraint<T>)> {
    let topo = GridTopology::new(resolution)?;
    let dim = topo.dim();
    let n = topo.vertex_count();
    let one = T::one();
    let coord = |c: usize, r: usize| -one + T::lit(2.0) * T::from_usize_lossy(c) / T::from_usize_lossy(r - 1);

    let mut positions = Vec::with_capacity(n * dim);
    let mut adjacency = Vec::with_capacity(n);
    let mut kinds = Vec::with_capacity(n);
    for v in 0..n {
        let c = topo.coords(v);
        for a in 0..dim {
            positions.push(coord(c[a], resolution[a]));
        }
        // CCW in 2D: +x, +y, -x, -y; 3D appends -z, +z.
        let mut nbrs = Vec::with_capacity(2 * dim);
        let mut step = |axis: usize, up: bool| {
            let mut cc = c.clone();
            if up && c[axis] + 1 < resolution[axis] {
                cc[axis] += 1;
                nbrs.push(topo.index(&cc));
            } else if !up && c[axis] > 0 {
                cc[axis] -= 1;
                nbrs.push(topo.index(&cc));
            }
        };
        step(0, true);
        step(1, true);
        step(0, false);
        step(1, false);
        if dim == 3 {
            step(2, false);
            step(2, true);
        }
        adjacency.push(nbrs);

        let pins: Vec<(usize, T)> = (0..dim)
            .filter_map(|a| match c[a] {
                0 => Some((a, -one)),
                x if x + 1 == resolution[a] => Some((a, one)),
                _ => None,
            })
            .collect();
        kinds.push(if pins.is_empty() { VertexConstraint::Free } else { VertexConstraint::Pinned(pins) });
    }

    let mut cells = Vec::new();
    let mut simplices = Vec::new();
    if dim == 2 {
        let (nx, ny) = (resolution[0], resolution[1]);
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let q = [
                    topo.index(&[i, j]),
                    topo.index(&[i + 1, j]),
                    topo.index(&[i + 1, j + 1]),
                    topo.index(&[i, j + 1]),
                ];
                cells.extend_from_slice(&q);
                simplices.extend(subdivide_cell_2d(q).iter().flatten());
            }
        }
    } else {
        let (nx, ny, nz) = (resolution[0], resolution[1], resolution[2]);
        for k in 0..nz - 1 {
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let q = [
                        topo.index(&[i, j, k]),
                        topo.index(&[i + 1, j, k]),
                        topo.index(&[i + 1, j + 1, k]),
                        topo.index(&[i, j + 1, k]),
                        topo.index(&[i, j, k + 1]),
                        topo.index(&[i + 1, j, k + 1]),
                        topo.index(&[i + 1, j + 1, k + 1]),
                        topo.index(&[i, j + 1, k + 1]),
                    ];
                    cells.extend_from_slice(&q);
                    simplices.extend(subdivide_cell_3d(q).iter().flatten());
                }
            }
        }
    }

    let complex = SimplicialComplex::from_parts(dim, positions, simplices, cells, adjacency)?;
    Ok((complex, topo, BoundaryConstraint::new(kinds)))
}
