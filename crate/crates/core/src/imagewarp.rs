//! Image compaction on a deformable half-resolution pixel grid.
//!
//! Grid vertex `(i, j)` of an `h x w` grid starts at
//! `(-1 + 2 i / (w - 1), -1 + 2 j / (h - 1))`, so `x` follows image columns
//! and `y` follows rows. Raster pixel centers use the same corner-aligned
//! convention when an image is sampled at continuous coordinates.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::coloring::grid_parity_coloring;
use crate::complex::{build_grid, signed_area, signed_area_gradient, SimplicialComplex};
use crate::diffrep::WeightMode;
use crate::energy::{BarrierSpec, Objective};
use crate::error::{invalid, Error, Result};
use crate::optim::{optimize, AdamHyper, AdamState, OptConfig, OptResult};

/// Height, width and interleaved RGB samples in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RasterImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid("image must be non-empty"));
        }
        if data.len() != height * width * 3 {
            return Err(invalid(format!("expected {} samples, got {}", height * width * 3, data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("image contains non-finite samples"));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        Self::new(height, width, rgb.iter().copied().cycle().take(height * width * 3).collect())
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                data.extend_from_slice(&f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = 3 * (row * self.width + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = 3 * (row * self.width + col);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bilinear lookup at continuous pixel coordinates, edge-clamped.
    pub fn sample_pixel(&self, row: f64, col: f64) -> [f64; 3] {
        let r = row.clamp(0.0, (self.height - 1) as f64);
        let c = col.clamp(0.0, (self.width - 1) as f64);
        let (r0, c0) = (r.floor() as usize, c.floor() as usize);
        let (r1, c1) = ((r0 + 1).min(self.height - 1), (c0 + 1).min(self.width - 1));
        let (fr, fc) = (r - r0 as f64, c - c0 as f64);
        let (p00, p01, p10, p11) = (self.pixel(r0, c0), self.pixel(r0, c1), self.pixel(r1, c0), self.pixel(r1, c1));
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = p00[k] + (p01[k] - p00[k]) * fc;
            let bottom = p10[k] + (p11[k] - p10[k]) * fc;
            out[k] = top + (bottom - top) * fr;
        }
        out
    }

    /// Bilinear lookup at normalized coordinates in `[-1, 1]^2`.
    pub fn sample_normalized(&self, x: f64, y: f64) -> [f64; 3] {
        let col = (x + 1.0) * 0.5 * (self.width - 1) as f64;
        let row = (y + 1.0) * 0.5 * (self.height - 1) as f64;
        self.sample_pixel(row, col)
    }

    /// Binary PPM (`P6`), any maxval up to 255.
    pub fn read_ppm(reader: impl Read) -> Result<Self> {
        let mut r = BufReader::new(reader);
        let mut header = Vec::new();
        while header.len() < 4 {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(invalid("truncated PPM header"));
            }
            let content = line.split('#').next().unwrap_or("");
            header.extend(content.split_whitespace().map(str::to_string));
        }
        if header[0] != "P6" {
            return Err(invalid(format!("unsupported PPM magic {:?}", header[0])));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|e| invalid(format!("bad PPM header field {s:?}: {e}")));
        let (width, height, maxval) = (parse(&header[1])?, parse(&header[2])?, parse(&header[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(invalid(format!("unsupported PPM maxval {maxval}")));
        }
        let mut bytes = vec![0u8; width * height * 3];
        r.read_exact(&mut bytes)?;
        let scale = 1.0 / maxval as f64;
        Self::new(height, width, bytes.iter().map(|&b| (b as f64 * scale).min(1.0)).collect())
    }

    pub fn write_ppm(&self, mut writer: impl Write) -> Result<()> {
        write!(writer, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        writer.write_all(&bytes)?;
        Ok(())
    }

    pub fn load_ppm(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_ppm(std::fs::File::open(path)?)
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_ppm(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

/// `10 log10(1 / MSE)` over all channels, capped at 99 dB.
pub fn psnr(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    if a.height != b.height || a.width != b.width {
        return Err(invalid(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(99.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(99.0))
}

/// Separable bilinear resampling with half-pixel-center alignment.
pub fn bilinear_resize(img: &RasterImage, out_h: usize, out_w: usize) -> Result<RasterImage> {
    if out_h == 0 || out_w == 0 {
        return Err(invalid("output size must be non-empty"));
    }
    let src = |o: usize, n_in: usize, n_out: usize| -> f64 {
        ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64)
    };
    RasterImage::from_fn(out_h, out_w, |r, c| {
        img.sample_pixel(src(r, img.height, out_h), src(c, img.width, out_w))
    })
}

/// Normalized discrete Gaussian with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if !(sigma > 0.0) {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable, edge-clamped Gaussian blur; `sigma = 0` returns a copy.
pub fn gaussian_blur(img: &RasterImage, sigma: f64) -> Result<RasterImage> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(invalid("blur sigma must be a finite non-negative number"));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let k = gaussian_kernel(sigma);
    let radius = (k.len() / 2) as i64;
    let (h, w) = (img.height as i64, img.width as i64);
    let pass = |input: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; input.len()];
        out.par_chunks_mut(3 * img.width).enumerate().for_each(|(r, row)| {
            for c in 0..w {
                let mut acc = [0.0; 3];
                for (t, &kv) in k.iter().enumerate() {
                    let off = t as i64 - radius;
                    let (rr, cc) = if horizontal {
                        (r as i64, (c + off).clamp(0, w - 1))
                    } else {
                        ((r as i64 + off).clamp(0, h - 1), c)
                    };
                    let i = 3 * (rr * w + cc) as usize;
                    for ch in 0..3 {
                        acc[ch] += kv * input[i + ch];
                    }
                }
                row[3 * c as usize..3 * c as usize + 3].copy_from_slice(&acc);
            }
        });
        out
    };
    let tmp = pass(&img.data, true);
    RasterImage::new(img.height, img.width, pass(&tmp, false))
}

/// Triangle `t` of the fixed-diagonal split: cell `t / 2`, lower-left to
/// upper-right diagonal.
fn sampling_triangle(grid_w: usize, t: usize) -> [usize; 3] {
    let cell = t / 2;
    let (i, j) = (cell % (grid_w - 1), cell / (grid_w - 1));
    let a = j * grid_w + i;
    let (b, c, d) = (a + 1, a + grid_w + 1, a + grid_w);
    if t % 2 == 0 {
        [a, b, c]
    } else {
        [a, c, d]
    }
}

#[inline]
fn point(positions: &[f64], v: usize) -> [f64; 2] {
    [positions[2 * v], positions[2 * v + 1]]
}

fn barycentric(positions: &[f64], tri: [usize; 3], q: [f64; 2]) -> Option<[f64; 3]> {
    let [p0, p1, p2] = tri.map(|v| point(positions, v));
    let area = signed_area(p0, p1, p2);
    if area == 0.0 || !area.is_finite() {
        return None;
    }
    Some([
        signed_area(q, p1, p2) / area,
        signed_area(p0, q, p2) / area,
        signed_area(p0, p1, q) / area,
    ])
}

const INSIDE_TOL: f64 = 1e-12;

/// Point location on the fixed-diagonal triangulation of a deformed grid: a
/// rasterized index map gives a starting triangle, then a walk across edges.
#[derive(Clone, Debug)]
pub struct PointLocator {
    grid_h: usize,
    grid_w: usize,
    map_h: usize,
    map_w: usize,
    map: Vec<u32>,
}

impl PointLocator {
    /// Index map at 4x the grid resolution.
    pub fn build(grid_h: usize, grid_w: usize, positions: &[f64]) -> Self {
        let (map_h, map_w) = (4 * grid_h, 4 * grid_w);
        let mut map = vec![u32::MAX; map_h * map_w];
        let to_map = |v: f64, n: usize| (v + 1.0) * 0.5 * n as f64 - 0.5;
        for t in 0..2 * (grid_h - 1) * (grid_w - 1) {
            let tri = sampling_triangle(grid_w, t);
            let ps = tri.map(|v| point(positions, v));
            let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
            for p in &ps {
                x0 = x0.min(p[0]);
                x1 = x1.max(p[0]);
                y0 = y0.min(p[1]);
                y1 = y1.max(p[1]);
            }
            let cx0 = to_map(x0, map_w).ceil().max(0.0) as usize;
            let cx1 = (to_map(x1, map_w).floor().max(-1.0) as i64).min(map_w as i64 - 1);
            let cy0 = to_map(y0, map_h).ceil().max(0.0) as usize;
            let cy1 = (to_map(y1, map_h).floor().max(-1.0) as i64).min(map_h as i64 - 1);
            for my in cy0 as i64..=cy1 {
                for mx in cx0 as i64..=cx1 {
                    let q = [
                        -1.0 + 2.0 * (mx as f64 + 0.5) / map_w as f64,
                        -1.0 + 2.0 * (my as f64 + 0.5) / map_h as f64,
                    ];
                    if let Some(l) = barycentric(positions, tri, q) {
                        if l.iter().all(|&x| x >= -INSIDE_TOL) {
                            map[my as usize * map_w + mx as usize] = t as u32;
                        }
                    }
                }
            }
        }
        Self { grid_h, grid_w, map_h, map_w, map }
    }

    fn start(&self, q: [f64; 2]) -> usize {
        let mx = (((q[0] + 1.0) * 0.5 * self.map_w as f64) as usize).min(self.map_w - 1);
        let my = (((q[1] + 1.0) * 0.5 * self.map_h as f64) as usize).min(self.map_h - 1);
        let t = self.map[my * self.map_w + mx];
        if t != u32::MAX {
            return t as usize;
        }
        // Undeformed guess.
        let ci = (((q[0] + 1.0) * 0.5 * (self.grid_w - 1) as f64) as usize).min(self.grid_w - 2);
        let cj = (((q[1] + 1.0) * 0.5 * (self.grid_h - 1) as f64) as usize).min(self.grid_h - 2);
        2 * (cj * (self.grid_w - 1) + ci)
    }

    fn walk(&self, positions: &[f64], q: [f64; 2], mut t: usize) -> Option<(usize, [f64; 3])> {
        let cells_w = self.grid_w - 1;
        let cap = 4 * (self.grid_w + self.grid_h) + 64;
        for _ in 0..cap {
            let l = barycentric(positions, sampling_triangle(self.grid_w, t), q)?;
            let (k, &worst) = l
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))?;
            if worst >= -INSIDE_TOL {
                return Some((t, l));
            }
            let cell = t / 2;
            let (i, j) = (cell % cells_w, cell / cells_w);
            // Opposite edges: lower triangle (a, b, c), upper triangle (a, c, d).
            let next = match (t % 2, k) {
                (0, 0) => (i + 1 < cells_w).then(|| 2 * (cell + 1) + 1),
                (0, 1) => Some(t + 1),
                (0, _) => (j > 0).then(|| 2 * (cell - cells_w) + 1),
                (1, 0) => (j + 2 < self.grid_h).then(|| 2 * (cell + cells_w)),
                (1, 1) => (i > 0).then(|| 2 * (cell - 1)),
                _ => Some(t - 1),
            };
            t = next?;
        }
        None
    }

    /// Triangle and barycentric coordinates of `q`, if some triangle
    /// contains it.
    pub fn locate(&self, positions: &[f64], q: [f64; 2]) -> Option<(usize, [f64; 3])> {
        if let Some(hit) = self.walk(positions, q, self.start(q)) {
            return Some(hit);
        }
        (0..self.triangle_count()).find_map(|t| {
            let l = barycentric(positions, sampling_triangle(self.grid_w, t), q)?;
            l.iter().all(|&x| x >= -INSIDE_TOL).then_some((t, l))
        })
    }

    /// Like [`PointLocator::locate`], but on folded or torn configurations
    /// falls back to the triangle whose smallest coordinate is largest.
    pub fn locate_nearest(&self, positions: &[f64], q: [f64; 2]) -> Option<(usize, [f64; 3])> {
        self.locate(positions, q).or_else(|| {
            (0..self.triangle_count())
                .filter_map(|t| barycentric(positions, sampling_triangle(self.grid_w, t), q).map(|l| (t, l)))
                .max_by(|a, b| {
                    let ma = a.1.iter().copied().fold(f64::INFINITY, f64::min);
                    let mb = b.1.iter().copied().fold(f64::INFINITY, f64::min);
                    ma.partial_cmp(&mb).unwrap_or(std::cmp::Ordering::Equal)
                })
        })
    }

    pub fn triangle_count(&self) -> usize {
        2 * (self.grid_h - 1) * (self.grid_w - 1)
    }

    pub fn triangle(&self, t: usize) -> [usize; 3] {
        sampling_triangle(self.grid_w, t)
    }
}

/// A deformed `h x w` vertex grid with one RGB color per vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformableImage {
    height: usize,
    width: usize,
    colors: Vec<[f64; 3]>,
    positions: Vec<f64>,
}

const DGIM_MAGIC: &[u8; 4] = b"DGIM";

impl DeformableImage {
    pub fn new(height: usize, width: usize, colors: Vec<[f64; 3]>, positions: Vec<f64>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(invalid("grid must be at least 2x2"));
        }
        if colors.len() != height * width || positions.len() != 2 * height * width {
            return Err(invalid("colors or positions do not match the grid size"));
        }
        if colors.iter().flatten().chain(&positions).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite grid data"));
        }
        let colors = colors.into_iter().map(|c| c.map(|v| v.clamp(0.0, 1.0))).collect();
        Ok(Self { height, width, colors, positions })
    }

    /// Undeformed grid with colors sampled from `target`.
    pub fn from_target(target: &RasterImage, height: usize, width: usize) -> Result<Self> {
        let (complex, _, _) = build_grid::<f64>(&[width, height])?;
        let positions = complex.positions().to_vec();
        let colors = positions.chunks_exact(2).map(|p| target.sample_normalized(p[0], p[1])).collect();
        Self::new(height, width, colors, positions)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// The grid complex (4 triangles per cell) at the current positions.
    pub fn complex(&self) -> Result<SimplicialComplex<f64>> {
        let (mut c, _, _) = build_grid::<f64>(&[self.width, self.height])?;
        c.set_positions(self.positions.clone());
        Ok(c)
    }

    pub fn is_injective(&self) -> Result<bool> {
        let c = self.complex()?;
        Ok(c.is_injective(c.positions()))
    }

    pub fn locator(&self) -> PointLocator {
        PointLocator::build(self.height, self.width, &self.positions)
    }

    /// Barycentric color blend of the sampling triangle containing `(x, y)`.
    pub fn sample_color(&self, x: f64, y: f64) -> Result<[f64; 3]> {
        self.sample_with(&self.locator(), x, y)
    }

    pub fn sample_with(&self, locator: &PointLocator, x: f64, y: f64) -> Result<[f64; 3]> {
        let (t, l) = locator
            .locate(&self.positions, [x, y])
            .ok_or_else(|| Error::InternalInvariant(format!("point ({x}, {y}) lies in no grid cell")))?;
        Ok(blend(&self.colors, locator.triangle(t), l))
    }

    /// `DGIM`, then height and width as little-endian u32, then row-major
    /// little-endian f32 records of `r, g, b, x, y`.
    pub fn write_dgim(&self, mut writer: impl Write) -> Result<()> {
        writer.write_all(DGIM_MAGIC)?;
        writer.write_all(&(self.height as u32).to_le_bytes())?;
        writer.write_all(&(self.width as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.colors.len() * 20);
        for (c, p) in self.colors.iter().zip(self.positions.chunks_exact(2)) {
            for v in [c[0], c[1], c[2], p[0], p[1]] {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        writer.write_all(&buf)?;
        Ok(())
    }

    pub fn read_dgim(mut reader: impl Read) -> Result<Self> {
        let mut head = [0u8; 12];
        reader.read_exact(&mut head)?;
        if &head[..4] != DGIM_MAGIC {
            return Err(invalid("not a DGIM file"));
        }
        let height = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let n = height
            .checked_mul(width)
            .filter(|&n| n <= 1 << 28)
            .ok_or_else(|| invalid("DGIM dimensions too large"))?;
        let mut bytes = vec![0u8; n * 20];
        reader.read_exact(&mut bytes)?;
        let vals: Vec<f64> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect();
        let colors = vals.chunks_exact(5).map(|r| [r[0], r[1], r[2]]).collect();
        let positions = vals.chunks_exact(5).flat_map(|r| [r[3], r[4]]).collect();
        Self::new(height, width, colors, positions)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_dgim(BufReader::new(std::fs::File::open(path)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_dgim(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

fn blend(colors: &[[f64; 3]], tri: [usize; 3], l: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (k, &v) in tri.iter().enumerate() {
        for ch in 0..3 {
            out[ch] += l[k] * colors[v][ch];
        }
    }
    out
}

/// Splats `samples_per_cell` stratified samples of every deformed cell into
/// the output pixel nearest to each sample and averages; pixels that
/// receive nothing copy the nearest filled pixel.
pub fn reconstruct(img: &DeformableImage, out_h: usize, out_w: usize, samples_per_cell: usize, seed: u64) -> Result<RasterImage> {
    if out_h < 2 || out_w < 2 {
        return Err(invalid("output must be at least 2x2"));
    }
    let side = (samples_per_cell.max(1) as f64).sqrt().ceil() as usize;
    let (gh, gw) = (img.height, img.width);
    let cells_w = gw - 1;
    let rows: Vec<usize> = (0..gh - 1).collect();
    // One accumulator per cell row, merged in row order.
    let partials: Vec<Vec<(usize, [f64; 3])>> = rows
        .par_iter()
        .map(|&j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut out = Vec::with_capacity(cells_w * side * side);
            for i in 0..cells_w {
                let cell = j * cells_w + i;
                for sy in 0..side {
                    for sx in 0..side {
                        let u = (sx as f64 + rng.gen::<f64>()) / side as f64;
                        let v = (sy as f64 + rng.gen::<f64>()) / side as f64;
                        let (t, l) = if v <= u {
                            (2 * cell, [1.0 - u, u - v, v])
                        } else {
                            (2 * cell + 1, [1.0 - v, u, v - u])
                        };
                        let tri = sampling_triangle(gw, t);
                        let mut p = [0.0; 2];
                        for (k, &vv) in tri.iter().enumerate() {
                            p[0] += l[k] * img.positions[2 * vv];
                            p[1] += l[k] * img.positions[2 * vv + 1];
                        }
                        let c = ((p[0] + 1.0) * 0.5 * (out_w - 1) as f64).round().clamp(0.0, (out_w - 1) as f64) as usize;
                        let r = ((p[1] + 1.0) * 0.5 * (out_h - 1) as f64).round().clamp(0.0, (out_h - 1) as f64) as usize;
                        out.push((r * out_w + c, blend(&img.colors, tri, l)));
                    }
                }
            }
            out
        })
        .collect();
    let mut sum = vec![[0.0; 3]; out_h * out_w];
    let mut count = vec![0usize; out_h * out_w];
    for part in &partials {
        for &(px, c) in part {
            for ch in 0..3 {
                sum[px][ch] += c[ch];
            }
            count[px] += 1;
        }
    }
    let mut data = vec![0.0; out_h * out_w * 3];
    let mut queue = std::collections::VecDeque::new();
    let mut filled = vec![false; out_h * out_w];
    for px in 0..out_h * out_w {
        if count[px] > 0 {
            for ch in 0..3 {
                data[3 * px + ch] = sum[px][ch] / count[px] as f64;
            }
            filled[px] = true;
            queue.push_back(px);
        }
    }
    while let Some(px) = queue.pop_front() {
        let (r, c) = (px / out_w, px % out_w);
        let nbrs = [
            (r > 0).then(|| px - out_w),
            (r + 1 < out_h).then(|| px + out_w),
            (c > 0).then(|| px - 1),
            (c + 1 < out_w).then(|| px + 1),
        ];
        for q in nbrs.into_iter().flatten() {
            if !filled[q] {
                filled[q] = true;
                data.copy_within(3 * px..3 * px + 3, 3 * q);
                queue.push_back(q);
            }
        }
    }
    RasterImage::new(out_h, out_w, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompactConfig {
    /// Color steps of the alternating optimizer.
    pub iterations: usize,
    pub samples: usize,
    pub weight_lr: f64,
    pub color_lr: f64,
    pub blur: bool,
    /// Initial blur sigma as a fraction of the smaller target dimension.
    pub blur_sigma_fraction: f64,
    /// Fraction of the iterations over which the blur decays to zero.
    pub blur_fraction: f64,
    pub weight_mode: WeightMode,
    pub seed: u64,
    pub verify_each_step: bool,
}

impl Default for CompactConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            samples: 1 << 16,
            weight_lr: 1e-2,
            color_lr: 1e-2,
            blur: true,
            blur_sigma_fraction: 0.02,
            blur_fraction: 0.6,
            weight_mode: WeightMode::PerVertex,
            seed: 0,
            verify_each_step: false,
        }
    }
}

impl CompactConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.samples == 0 {
            return Err(invalid("iterations and samples must be positive"));
        }
        if !(self.weight_lr > 0.0 && self.color_lr > 0.0) {
            return Err(invalid("learning rates must be positive"));
        }
        if !(0.0..=1.0).contains(&self.blur_fraction) || !(self.blur_sigma_fraction >= 0.0) {
            return Err(invalid("blur schedule out of range"));
        }
        Ok(())
    }

    /// Blur sigma in target pixels at `iteration`.
    pub fn sigma_at(&self, iteration: usize, min_dim: usize) -> f64 {
        if !self.blur {
            return 0.0;
        }
        let sigma0 = self.blur_sigma_fraction * min_dim as f64;
        let span = self.blur_fraction * self.iterations as f64;
        if span <= 0.0 {
            return 0.0;
        }
        (sigma0 * (1.0 - iteration as f64 / span)).max(0.0)
    }
}

struct SampleTerm {
    loss: f64,
    tri: [usize; 3],
    dpos: [[f64; 2]; 3],
    dcol: [[f64; 3]; 3],
}

/// Mean L1 color error over random sample points, with gradients for
/// vertex positions (returned) and vertex colors (stepped internally).
pub struct ImageObjective {
    grid_h: usize,
    grid_w: usize,
    target: RasterImage,
    blurred: RasterImage,
    sigma: f64,
    config: CompactConfig,
    samples: Vec<[f64; 2]>,
    colors: Vec<[f64; 3]>,
    color_grad: Vec<f64>,
    color_adam: AdamState<f64>,
    locator: PointLocator,
}

impl ImageObjective {
    pub fn new(target: RasterImage, grid: &DeformableImage, config: CompactConfig) -> Result<Self> {
        config.validate()?;
        let n = grid.colors.len();
        Ok(Self {
            grid_h: grid.height,
            grid_w: grid.width,
            blurred: target.clone(),
            target,
            sigma: 0.0,
            samples: Vec::new(),
            colors: grid.colors.clone(),
            color_grad: vec![0.0; 3 * n],
            color_adam: AdamState::new(AdamHyper::new(config.color_lr), 1, 3 * n),
            locator: grid.locator(),
            config,
        })
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    /// Current blur sigma in target pixels.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn term(&self, positions: &[f64], q: [f64; 2], gradients: bool) -> SampleTerm {
        let target = self.blurred.sample_normalized(q[0], q[1]);
        let Some((t, l)) = self.locator.locate_nearest(positions, q) else {
            return SampleTerm { loss: 0.0, tri: [0; 3], dpos: [[0.0; 2]; 3], dcol: [[0.0; 3]; 3] };
        };
        let tri = self.locator.triangle(t);
        let c = blend(&self.colors, tri, l);
        let mut loss = 0.0;
        let mut sign = [0.0; 3];
        for ch in 0..3 {
            let d = c[ch] - target[ch];
            loss += d.abs();
            sign[ch] = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
        }
        let mut dpos = [[0.0; 2]; 3];
        let mut dcol = [[0.0; 3]; 3];
        if gradients {
            let ps = tri.map(|v| point(positions, v));
            let s: [f64; 3] = tri.map(|v| (0..3).map(|ch| sign[ch] * self.colors[v][ch]).sum());
            let area = signed_area(ps[0], ps[1], ps[2]);
            let sl: f64 = (0..3).map(|k| s[k] * l[k]).sum();
            // d(lambda_k) = (dA_k - lambda_k dA) / A with A_k the area with q in slot k.
            let ga = signed_area_gradient(ps[0], ps[1], ps[2]);
            for j in 0..3 {
                for a in 0..2 {
                    dpos[j][a] -= sl * ga[j][a] / area;
                }
            }
            for k in 0..3 {
                let mut sub = ps;
                sub[k] = q;
                let gk = signed_area_gradient(sub[0], sub[1], sub[2]);
                for j in (0..3).filter(|&j| j != k) {
                    for a in 0..2 {
                        dpos[j][a] += s[k] * gk[j][a] / area;
                    }
                }
                for ch in 0..3 {
                    dcol[k][ch] = l[k] * sign[ch];
                }
            }
        }
        SampleTerm { loss, tri, dpos, dcol }
    }

    fn evaluate(&self, positions: &[f64], mut pos_grad: Option<&mut [f64]>, col_grad: Option<&mut [f64]>) -> f64 {
        let gradients = pos_grad.is_some() || col_grad.is_some();
        let terms: Vec<Vec<SampleTerm>> = self
            .samples
            .par_chunks(1024)
            .map(|chunk| chunk.iter().map(|&q| self.term(positions, q, gradients)).collect())
            .collect();
        let scale = 1.0 / (3.0 * self.samples.len().max(1) as f64);
        let mut loss = 0.0;
        let mut col_grad = col_grad;
        for t in terms.iter().flatten() {
            loss += t.loss;
            if let Some(g) = pos_grad.as_deref_mut() {
                for (k, &v) in t.tri.iter().enumerate() {
                    g[2 * v] += scale * t.dpos[k][0];
                    g[2 * v + 1] += scale * t.dpos[k][1];
                }
            }
            if let Some(g) = col_grad.as_deref_mut() {
                for (k, &v) in t.tri.iter().enumerate() {
                    for ch in 0..3 {
                        g[3 * v + ch] += scale * t.dcol[k][ch];
                    }
                }
            }
        }
        loss * scale
    }

    /// Loss and color gradient at `positions` for the current samples.
    pub fn color_gradient(&self, positions: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; self.color_grad.len()];
        let loss = self.evaluate(positions, None, Some(&mut g));
        (loss, g)
    }

    /// Draws the sample set and target blur for `iteration`.
    pub fn prepare(&mut self, iteration: usize) -> Result<()> {
        let min_dim = self.target.height.min(self.target.width);
        let sigma = self.config.sigma_at(iteration, min_dim);
        let sigma0 = self.config.sigma_at(0, min_dim);
        // Re-blur once sigma has moved by 1% of its start value.
        if iteration == 0 || (sigma - self.sigma).abs() >= 0.01 * sigma0 || (sigma == 0.0 && self.sigma != 0.0) {
            self.blurred = gaussian_blur(&self.target, sigma)?;
            self.sigma = sigma;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ iteration as u64);
        self.samples = (0..self.config.samples)
            .map(|_| [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)])
            .collect();
        Ok(())
    }
}

impl Objective<f64> for ImageObjective {
    fn value(&self, positions: &[f64]) -> f64 {
        self.evaluate(positions, None, None)
    }

    fn value_and_gradient(&mut self, positions: &[f64], grad: &mut [f64]) -> f64 {
        let mut cg = vec![0.0; self.color_grad.len()];
        let loss = self.evaluate(positions, Some(grad), Some(&mut cg));
        self.color_grad = cg;
        loss
    }

    fn begin_iteration(&mut self, iteration: usize, _total: usize) {
        // Only fails for invalid sigma, which the config validation excludes.
        let _ = self.prepare(iteration);
    }

    fn end_iteration(&mut self, positions: &[f64]) {
        let mut flat: Vec<f64> = self.colors.iter().flatten().copied().collect();
        let len = flat.len();
        self.color_adam.step(0, &mut flat, &self.color_grad, &[0..len]);
        for (c, f) in self.colors.iter_mut().zip(flat.chunks_exact(3)) {
            *c = [f[0].clamp(0.0, 1.0), f[1].clamp(0.0, 1.0), f[2].clamp(0.0, 1.0)];
        }
        self.color_grad.iter_mut().for_each(|g| *g = 0.0);
        self.locator = PointLocator::build(self.grid_h, self.grid_w, positions);
    }
}

#[derive(Clone, Debug)]
pub struct CompactResult {
    pub image: DeformableImage,
    pub run: OptResult<f64>,
}

/// Optimizes a `grid_h x grid_w` deformable image against `target`.
pub fn compact(target: &RasterImage, grid_h: usize, grid_w: usize, config: &CompactConfig) -> Result<CompactResult> {
    config.validate()?;
    if grid_h < 2 || grid_w < 2 {
        return Err(invalid("grid must be at least 2x2"));
    }
    let (complex, topo, constraints) = build_grid::<f64>(&[grid_w, grid_h])?;
    let coloring = grid_parity_coloring(&topo);
    let init = DeformableImage::from_target(target, grid_h, grid_w)?;
    let mut objective = ImageObjective::new(target.clone(), &init, config.clone())?;
    let opt = OptConfig {
        adam: AdamHyper::new(config.weight_lr),
        weight_mode: config.weight_mode,
        barrier: BarrierSpec::for_image(target.height(), target.width()),
        seed: config.seed,
        verify_each_step: config.verify_each_step,
        ..OptConfig::new(config.iterations)
    };
    let run = optimize(&complex, &constraints, &coloring, &mut objective, &opt)?;
    let image = DeformableImage::new(grid_h, grid_w, objective.colors.clone(), run.positions.clone())?;
    Ok(CompactResult { image, run })
}

/// Down- then up-sampling through a `grid_h x grid_w` image.
pub fn bilinear_baseline(target: &RasterImage, grid_h: usize, grid_w: usize) -> Result<RasterImage> {
    bilinear_resize(&bilinear_resize(target, grid_h, grid_w)?, target.height(), target.width())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub image: String,
    pub method: String,
    pub psnr_db: f64,
    pub seconds: f64,
}

/// `image,method,psnr_db,seconds` rows.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("image,method,psnr_db,seconds\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.4},{:.3}\n", r.image, r.method, r.psnr_db, r.seconds));
    }
    s
}

/// Reconstruction density used for scoring.
pub const EVAL_SAMPLES_PER_CELL: usize = 64;

/// Seed used for scoring reconstructions.
pub const EVAL_SEED: u64 = 7;
