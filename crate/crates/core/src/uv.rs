//! Disk-topology meshes: OBJ I/O, Tutte embedding and UV energy
//! optimization.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::coloring::greedy_coloring;
use crate::complex::{BoundaryConstraint, SimplicialComplex, VertexConstraint};
use crate::energy::{triangle_quantities, EnergyKind, Objective, ReferenceGeometry, TriangleQuantities, UvObjective};
use crate::error::{invalid, Error, Result};
use crate::optim::{detect_inversions, optimize, OptConfig, OptResult};

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh3D {
    positions: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
}

impl TriangleMesh3D {
    /// Validates indices and rejects degenerate triangles.
    pub fn new(positions: Vec<[f64; 3]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(invalid("mesh has no triangles"));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= positions.len()) {
                return Err(invalid(format!("triangle {t} references a missing vertex")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(invalid(format!("triangle {t} repeats a vertex")));
            }
        }
        if positions.iter().flatten().any(|x| !x.is_finite()) {
            return Err(invalid("non-finite vertex coordinate"));
        }
        Ok(Self { positions, triangles })
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    /// Sorted, deduplicated neighbor lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.positions.len()];
        for t in &self.triangles {
            for k in 0..3 {
                adj[t[k]].push(t[(k + 1) % 3]);
                adj[t[k]].push(t[(k + 2) % 3]);
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }
}

/// Parses vertices and triangular faces; other statements are ignored.
/// Face entries may use the `v/vt/vn` forms and negative indices.
pub fn parse_obj(text: &str, origin: &str) -> Result<TriangleMesh3D> {
    let err = |line: usize, msg: String| Error::Parse { path: origin.into(), line, msg };
    let mut positions = Vec::new();
    let mut triangles = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut it = raw.split_whitespace();
        match it.next() {
            Some("v") => {
                let coords: Vec<f64> = it
                    .take(3)
                    .map(|s| s.parse::<f64>().map_err(|e| err(line, format!("bad coordinate {s:?}: {e}"))))
                    .collect::<Result<_>>()?;
                if coords.len() != 3 {
                    return Err(err(line, "vertex needs three coordinates".into()));
                }
                positions.push([coords[0], coords[1], coords[2]]);
            }
            Some("f") => {
                let ids: Vec<usize> = it
                    .map(|s| {
                        let head = s.split('/').next().unwrap_or("");
                        let k: i64 = head.parse().map_err(|e| err(line, format!("bad index {s:?}: {e}")))?;
                        let n = positions.len() as i64;
                        let idx = if k < 0 { n + k } else { k - 1 };
                        if idx < 0 || idx >= n {
                            return Err(err(line, format!("index {k} out of range")));
                        }
                        Ok(idx as usize)
                    })
                    .collect::<Result<_>>()?;
                if ids.len() != 3 {
                    return Err(err(line, format!("face has {} vertices; only triangles are supported", ids.len())));
                }
                triangles.push([ids[0], ids[1], ids[2]]);
            }
            _ => {}
        }
    }
    TriangleMesh3D::new(positions, triangles)
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<TriangleMesh3D> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_obj(&text, &path.display().to_string())
}

/// OBJ text with one `vt` per vertex when `uv` is given.
pub fn format_obj(mesh: &TriangleMesh3D, uv: Option<&[[f64; 2]]>) -> String {
    let mut s = String::new();
    for p in &mesh.positions {
        let _ = writeln!(s, "v {} {} {}", p[0], p[1], p[2]);
    }
    if let Some(uv) = uv {
        for t in uv {
            let _ = writeln!(s, "vt {} {}", t[0], t[1]);
        }
    }
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|v| v + 1);
        if uv.is_some() {
            let _ = writeln!(s, "f {a}/{a} {b}/{b} {c}/{c}");
        } else {
            let _ = writeln!(s, "f {a} {b} {c}");
        }
    }
    s
}

pub fn save_obj(path: impl AsRef<Path>, mesh: &TriangleMesh3D, uv: Option<&[[f64; 2]]>) -> Result<()> {
    if let Some(uv) = uv {
        if uv.len() != mesh.vertex_count() {
            return Err(invalid("one texture coordinate per vertex is required"));
        }
    }
    std::fs::write(path, format_obj(mesh, uv))?;
    Ok(())
}

/// The single boundary cycle, oriented like the triangles.
pub fn boundary_loop(mesh: &TriangleMesh3D) -> Result<Vec<usize>> {
    let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
    for t in &mesh.triangles {
        for k in 0..3 {
            *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
        }
    }
    if let Some((&(a, b), _)) = directed.iter().find(|(_, &n)| n > 1) {
        return Err(invalid(format!("edge {a}-{b} is non-manifold or inconsistently oriented")));
    }
    let mut next: HashMap<usize, usize> = HashMap::new();
    for &(a, b) in directed.keys() {
        if !directed.contains_key(&(b, a)) && next.insert(a, b).is_some() {
            return Err(invalid(format!("vertex {a} is non-manifold on the boundary")));
        }
    }
    let mut starts: Vec<usize> = next.keys().copied().collect();
    starts.sort_unstable();
    let mut seen = std::collections::HashSet::new();
    let mut loops: Vec<Vec<usize>> = Vec::new();
    for s in starts {
        if seen.contains(&s) {
            continue;
        }
        let mut cycle = vec![s];
        seen.insert(s);
        let mut v = next[&s];
        while v != s {
            if !seen.insert(v) {
                return Err(invalid("boundary edges do not form simple cycles"));
            }
            cycle.push(v);
            v = *next.get(&v).ok_or_else(|| invalid("open boundary chain"))?;
        }
        loops.push(cycle);
    }
    if loops.len() != 1 {
        return Err(Error::NotADisk { loops: loops.len() });
    }
    let undirected = (directed.len() + next.len()) / 2;
    let used = {
        let mut u = vec![false; mesh.vertex_count()];
        mesh.triangles.iter().flatten().for_each(|&v| u[v] = true);
        u.iter().filter(|&&x| x).count()
    };
    let euler = used as i64 - undirected as i64 + mesh.triangles.len() as i64;
    if euler != 1 {
        return Err(Error::NotADisk { loops: 1 });
    }
    Ok(loops.pop().unwrap())
}

fn norm3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Largest `|p_i - mean(neighbors)|` over non-boundary vertices.
pub fn tutte_residual(uv: &[[f64; 2]], adjacency: &[Vec<usize>], on_boundary: &[bool]) -> f64 {
    let mut worst = 0.0f64;
    for (i, nbrs) in adjacency.iter().enumerate() {
        if on_boundary[i] || nbrs.is_empty() {
            continue;
        }
        let k = nbrs.len() as f64;
        for a in 0..2 {
            let avg = nbrs.iter().map(|&j| uv[j][a]).sum::<f64>() / k;
            worst = worst.max((uv[i][a] - avg).abs());
        }
    }
    worst
}

/// Boundary on the unit circle spaced by 3D arc length, interior vertices at
/// the uniform average of their neighbors.
pub fn tutte_embed(mesh: &TriangleMesh3D) -> Result<Vec<[f64; 2]>> {
    let boundary = boundary_loop(mesh)?;
    let n = mesh.vertex_count();
    let adj = mesh.adjacency();
    if let Some(v) = (0..n).find(|&v| adj[v].is_empty()) {
        return Err(invalid(format!("vertex {v} belongs to no triangle")));
    }
    let mut uv = vec![[0.0; 2]; n];
    let mut on_boundary = vec![false; n];
    let lens: Vec<f64> = (0..boundary.len())
        .map(|i| norm3(mesh.positions[boundary[i]], mesh.positions[boundary[(i + 1) % boundary.len()]]))
        .collect();
    let total: f64 = lens.iter().sum();
    if !(total > 0.0) {
        return Err(invalid("boundary has zero length"));
    }
    let mut acc = 0.0;
    for (i, &v) in boundary.iter().enumerate() {
        let theta = 2.0 * PI * acc / total;
        uv[v] = [theta.cos(), theta.sin()];
        on_boundary[v] = true;
        acc += lens[i];
    }

    let interior: Vec<usize> = (0..n).filter(|&v| !on_boundary[v]).collect();
    let mut slot = vec![usize::MAX; n];
    for (i, &v) in interior.iter().enumerate() {
        slot[v] = i;
    }
    // deg_i x_i - sum_{interior j} x_j = sum_{boundary j} x_j
    let apply = |x: &[f64], out: &mut [f64]| {
        for (i, &v) in interior.iter().enumerate() {
            let mut s = adj[v].len() as f64 * x[i];
            for &j in &adj[v] {
                if slot[j] != usize::MAX {
                    s -= x[slot[j]];
                }
            }
            out[i] = s;
        }
    };
    let m = interior.len();
    for a in 0..2 {
        let b: Vec<f64> = interior
            .iter()
            .map(|&v| adj[v].iter().filter(|&&j| on_boundary[j]).map(|&j| uv[j][a]).sum())
            .collect();
        let x = conjugate_gradient(&apply, &b, m)?;
        for (i, &v) in interior.iter().enumerate() {
            uv[v][a] = x[i];
        }
    }
    let residual = tutte_residual(&uv, &adj, &on_boundary);
    if !(residual < 1e-10) {
        return Err(Error::Numeric(format!("Tutte residual {residual:e} above 1e-10")));
    }
    Ok(uv)
}

fn conjugate_gradient(apply: &dyn Fn(&[f64], &mut [f64]), b: &[f64], m: usize) -> Result<Vec<f64>> {
    let mut x = vec![0.0; m];
    if m == 0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; m];
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let cap = 20 * m + 1000;
    for _ in 0..cap {
        // Residual of the averaged form is r_i / deg_i <= r_i.
        if r.iter().all(|v| v.abs() < 1e-13) {
            return Ok(x);
        }
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            break;
        }
        let alpha = rr / pap;
        for i in 0..m {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..m {
            p[i] = r[i] + beta * p[i];
        }
    }
    if r.iter().all(|v| v.abs() < 1e-11) {
        return Ok(x);
    }
    Err(Error::Numeric("Tutte solve did not converge".into()))
}

/// UV complex with boundary vertices constrained to the unit circle.
pub fn uv_problem(mesh: &TriangleMesh3D, uv: &[[f64; 2]]) -> Result<(SimplicialComplex<f64>, BoundaryConstraint<f64>)> {
    let boundary = boundary_loop(mesh)?;
    let flat: Vec<f64> = uv.iter().flatten().copied().collect();
    let complex = SimplicialComplex::from_triangles(flat, mesh.triangles())?;
    let mut kinds = vec![VertexConstraint::Free; mesh.vertex_count()];
    for v in boundary {
        kinds[v] = VertexConstraint::OnUnitCircle;
    }
    Ok((complex, BoundaryConstraint::new(kinds)))
}

#[derive(Clone, Debug)]
pub struct UvResult {
    pub uv: Vec<[f64; 2]>,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub flipped: usize,
    pub run: OptResult<f64>,
}

/// Tutte initialization followed by optimization of one UV energy over a
/// greedy coloring.
pub fn optimize_uv(mesh: &TriangleMesh3D, kind: EnergyKind<f64>, config: &OptConfig<f64>) -> Result<UvResult> {
    let init = tutte_embed(mesh)?;
    optimize_uv_from(mesh, &init, kind, config)
}

/// [`optimize_uv`] from a given injective initial layout.
pub fn optimize_uv_from(
    mesh: &TriangleMesh3D,
    init: &[[f64; 2]],
    kind: EnergyKind<f64>,
    config: &OptConfig<f64>,
) -> Result<UvResult> {
    let (complex, constraints) = uv_problem(mesh, init)?;
    let reference = ReferenceGeometry::for_mesh(mesh.positions(), mesh.triangles())?;
    let mut objective = UvObjective::new(kind, mesh.triangles().to_vec(), reference)?;
    let coloring = greedy_coloring(complex.adjacency());
    let initial_energy = objective.value(complex.positions());
    let run = optimize(&complex, &constraints, &coloring, &mut objective, config)?;
    let uv: Vec<[f64; 2]> = run.positions.chunks_exact(2).map(|p| [p[0], p[1]]).collect();
    Ok(UvResult {
        flipped: detect_inversions(&complex, &run.positions).len(),
        initial_energy,
        final_energy: run.final_energy,
        uv,
        run,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramReport {
    /// Interior angles in degrees over `[0, 180]`.
    pub angles: Vec<HistogramBin>,
    /// `log10` of triangle areas over their observed range.
    pub areas: Vec<HistogramBin>,
}

impl HistogramReport {
    /// Rows of `kind,bin_low,bin_high,count`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,bin_low,bin_high,count\n");
        for (kind, bins) in [("angle", &self.angles), ("log10_area", &self.areas)] {
            for b in bins {
                let _ = writeln!(s, "{kind},{},{},{}", b.low, b.high, b.count);
            }
        }
        s
    }
}

fn bin_values(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<HistogramBin> {
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin { low: lo + i as f64 * width, high: lo + (i + 1) as f64 * width, count: 0 })
        .collect();
    for &v in values {
        let k = ((v - lo) / width).floor();
        let k = if k.is_nan() { 0 } else { (k.max(0.0) as usize).min(bins - 1) };
        out[k].count += 1;
    }
    out
}

/// Angle and log-area histograms of any triangle soup.
pub fn histograms(quantities: &[TriangleQuantities<f64>], bins: usize) -> HistogramReport {
    let bins = bins.max(1);
    let angles: Vec<f64> = quantities.iter().flat_map(|q| q.angles.map(f64::to_degrees)).collect();
    let smallest = quantities.iter().map(|q| q.area).filter(|&a| a > 0.0).fold(f64::INFINITY, f64::min);
    let logs: Vec<f64> = quantities
        .iter()
        .map(|q| if q.area > 0.0 { q.area.log10() } else { smallest.log10() })
        .collect();
    let (mut lo, mut hi) = logs
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 0.0);
    }
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    HistogramReport { angles: bin_values(&angles, 0.0, 180.0, bins), areas: bin_values(&logs, lo, hi, bins) }
}

/// Per-triangle quantities of a UV layout.
pub fn uv_quantities(uv: &[[f64; 2]], triangles: &[[usize; 3]]) -> Vec<TriangleQuantities<f64>> {
    triangles
        .iter()
        .map(|t| triangle_quantities(&[&uv[t[0]][..], &uv[t[1]][..], &uv[t[2]][..]]))
        .collect()
}

/// Per-triangle quantities of the 3D mesh.
pub fn mesh_quantities(mesh: &TriangleMesh3D) -> Vec<TriangleQuantities<f64>> {
    let p = &mesh.positions;
    mesh.triangles
        .iter()
        .map(|t| triangle_quantities(&[&p[t[0]][..], &p[t[1]][..], &p[t[2]][..]]))
        .collect()
}

pub fn histogram_report(uv: &[[f64; 2]], mesh: &TriangleMesh3D, bins: usize) -> HistogramReport {
    histograms(&uv_quantities(uv, mesh.triangles()), bins)
}

/// A jittered `n x n` grid over `[0, 1]^2` lifted onto a smooth height
/// field; `2 (n-1)^2` triangles.
pub fn height_field_mesh(n: usize, jitter: f64, seed: u64) -> Result<TriangleMesh3D> {
    use rand::{Rng, SeedableRng};
    if n < 2 {
        return Err(invalid("height field needs at least 2 vertices per side"));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let h = 1.0 / (n - 1) as f64;
    let mut positions = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let mut x = i as f64 * h;
            let mut y = j as f64 * h;
            if i > 0 && i + 1 < n {
                x += rng.gen_range(-jitter..=jitter) * h;
            }
            if j > 0 && j + 1 < n {
                y += rng.gen_range(-jitter..=jitter) * h;
            }
            let z = 0.35 * (2.0 * PI * x).sin() * (PI * y).cos() + 0.25 * (-(8.0 * ((x - 0.6).powi(2) + (y - 0.3).powi(2)))).exp();
            positions.push([x, y, z]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * (n - 1) * (n - 1));
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let a = j * n + i;
            let (b, c, d) = (a + 1, a + n + 1, a + n);
            if (i + j) % 2 == 0 {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            } else {
                triangles.push([a, b, d]);
                triangles.push([b, c, d]);
            }
        }
    }
    TriangleMesh3D::new(positions, triangles)
}
