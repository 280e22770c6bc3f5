//! Oracles and randomized checks shared by the integration tests and the
//! acceptance target.
#![allow(dead_code)]

use diffgrid::complex::in_kernel;
use diffgrid::energy::{
    barrier_energy, barrier_value_and_gradient, energy_after_step, energy_gradient, ReferenceGeometry, ToyObjective,
    UvObjective,
};
use diffgrid::imagewarp::{CompactConfig, DeformableImage, ImageObjective, RasterImage};
use diffgrid::optim::detect_inversions;
use diffgrid::uv::{boundary_loop, height_field_mesh, tutte_embed, tutte_residual, uv_problem, TriangleMesh3D};
use diffgrid::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;
use std::path::PathBuf;

pub const H: f64 = 1e-6;
pub const TOL: f64 = 1e-5;
pub const FLOOR: f64 = 1e-9;
pub const STATES: u64 = 100;

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// Largest central-difference deviation in units of the allowed error:
/// `TOL` relative to the gradient's max norm, never below `FLOOR`.
pub fn fd_error(f: impl Fn(&[f64]) -> f64, grad: &[f64], x: &[f64]) -> f64 {
    let scale = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    let allowed = (TOL * scale).max(FLOOR);
    let mut worst = 0.0f64;
    let mut y = x.to_vec();
    for i in 0..x.len() {
        y[i] = x[i] + H;
        let up = f(&y);
        y[i] = x[i] - H;
        let down = f(&y);
        y[i] = x[i];
        worst = worst.max(((up - down) / (2.0 * H) - grad[i]).abs() / allowed);
    }
    worst
}

pub fn jittered_grid(res: usize, amp: f64, rng: &mut ChaCha8Rng) -> (Complex, Constraints, Vec<f64>) {
    let (c, topo, bc) = build_grid::<f64>(&[res, res]).unwrap();
    let mut p = c.positions().to_vec();
    for v in 0..c.vertex_count() {
        if !topo.is_boundary(v) && amp > 0.0 {
            p[2 * v] += rng.gen_range(-amp..amp);
            p[2 * v + 1] += rng.gen_range(-amp..amp);
        }
    }
    (c, bc, p)
}

pub const TOY_KINDS: [EnergyKind<f64>; 3] = [
    EnergyKind::LX,
    EnergyKind::LXY,
    EnergyKind::LSpin { target_angle: 175.0 * std::f64::consts::PI / 180.0 },
];

/// Position gradient of a toy loss on jittered grids.
pub fn toy_gradient_error(kind: EnergyKind<f64>) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..STATES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, bc, p) = jittered_grid(4 + (seed % 3) as usize, 0.1, &mut rng);
        let mut obj = ToyObjective::new(kind, 2, ReferenceGeometry::for_toy(c.positions(), 2, &bc)).unwrap();
        let mut g = vec![0.0; p.len()];
        obj.value_and_gradient(&p, &mut g);
        worst = worst.max(fd_error(|x| obj.value(x), &g, &p));
    }
    worst
}

/// Position gradient of a UV energy on perturbed Tutte layouts.
pub fn uv_gradient_error(kind: EnergyKind<f64>) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..STATES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mesh = height_field_mesh(3 + (seed % 3) as usize, 0.25, seed).unwrap();
        let uv = tutte_embed(&mesh).unwrap();
        let p: Vec<f64> =
            uv.iter().flat_map(|q| [q[0] + rng.gen_range(-0.02..0.02), q[1] + rng.gen_range(-0.02..0.02)]).collect();
        let r = ReferenceGeometry::for_mesh(mesh.positions(), mesh.triangles()).unwrap();
        let mut obj = UvObjective::new(kind, mesh.triangles().to_vec(), r).unwrap();
        let mut g = vec![0.0; p.len()];
        obj.value_and_gradient(&p, &mut g);
        worst = worst.max(fd_error(|x| obj.value(x), &g, &p));
    }
    worst
}

/// Equiareal on a perturbed two-triangle square.
pub fn equiareal_square_error() -> f64 {
    let rest = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]];
    let tris = vec![[0, 1, 2], [0, 2, 3]];
    let mut worst = 0.0f64;
    for seed in 0..STATES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> =
            rest.iter().flat_map(|q| [q[0] + rng.gen_range(-0.1..0.1), q[1] + rng.gen_range(-0.1..0.1)]).collect();
        let r = ReferenceGeometry::for_mesh(&rest, &tris).unwrap();
        let mut obj = UvObjective::new(EnergyKind::Equiareal, tris.clone(), r).unwrap();
        let mut g = vec![0.0; 8];
        obj.value_and_gradient(&p, &mut g);
        worst = worst.max(fd_error(|x| obj.value(x), &g, &p));
    }
    worst
}

/// Barrier on two triangles whose areas lie inside the active band.
pub fn barrier_gradient_error() -> f64 {
    let d_hat = 1e-2;
    let spec = BarrierSpec::new(d_hat);
    let mut worst = 0.0f64;
    for seed in 0..STATES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len: f64 = rng.gen_range(0.2..1.0);
        let h0 = 2.0 * rng.gen_range(0.1..1.9) * d_hat / len;
        let h1 = 2.0 * rng.gen_range(0.1..1.9) * d_hat / len;
        let p = vec![0.0, 0.0, len, 0.0, rng.gen_range(-0.5..1.5), h0, rng.gen_range(-0.5..1.5), -h1];
        let c = Complex::from_triangles(p.clone(), &[[0, 1, 2], [1, 0, 3]]).unwrap();
        let mut g = vec![0.0; p.len()];
        let value = barrier_value_and_gradient(&c, &p, &spec, &mut g);
        assert!(value > 0.0);
        worst = worst.max(fd_error(|x| barrier_energy(&c, x, &spec), &g, &p));
    }
    worst
}

/// Raw-weight gradient of a toy loss through one masked convex-sum step.
pub fn toy_weight_gradient_error(kind: EnergyKind<f64>, mode: WeightMode) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..STATES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, topo, bc) = build_grid::<f64>(&[5, 5]).unwrap();
        let coloring = grid_parity_coloring(&topo);
        let w = DifferentialWeights::with_jitter(&c, mode, 0.5, &mut rng);
        let mut obj = ToyObjective::new(kind, 2, ReferenceGeometry::for_toy(c.positions(), 2, &bc)).unwrap();
        let active = coloring.members((seed % 2) as usize).to_vec();
        let barrier = BarrierSpec::default();
        let step = energy_gradient(&mut obj, &barrier, &c, &bc, &w, c.positions(), &active).unwrap();
        let f = |raw: &[f64]| {
            let mut w2 = w.clone();
            w2.raw_mut().copy_from_slice(raw);
            energy_after_step(&obj, &barrier, &c, &bc, &w2, c.positions(), &active).unwrap()
        };
        worst = worst.max(fd_error(f, &step.raw_grad, w.raw()));
    }
    worst
}

/// Raw-weight gradient of a UV energy, including the circle projection.
pub fn uv_weight_gradient_error(kind: EnergyKind<f64>) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..STATES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mesh = height_field_mesh(4, 0.25, seed).unwrap();
        let uv = tutte_embed(&mesh).unwrap();
        let (c, bc) = uv_problem(&mesh, &uv).unwrap();
        let coloring = greedy_coloring(c.adjacency());
        let w = DifferentialWeights::with_jitter(&c, WeightMode::PerVertex, 0.3, &mut rng);
        let r = ReferenceGeometry::for_mesh(mesh.positions(), mesh.triangles()).unwrap();
        let mut obj = UvObjective::new(kind, mesh.triangles().to_vec(), r).unwrap();
        let active = coloring.members(seed as usize % coloring.color_count()).to_vec();
        let barrier = BarrierSpec::default();
        let step = energy_gradient(&mut obj, &barrier, &c, &bc, &w, c.positions(), &active).unwrap();
        let f = |raw: &[f64]| {
            let mut w2 = w.clone();
            w2.raw_mut().copy_from_slice(raw);
            energy_after_step(&obj, &barrier, &c, &bc, &w2, c.positions(), &active).unwrap()
        };
        worst = worst.max(fd_error(f, &step.raw_grad, w.raw()));
    }
    worst
}

/// Sampled L1 image loss with respect to vertex positions.
pub fn image_gradient_error() -> f64 {
    let target = RasterImage::from_fn(16, 16, |r, c| {
        let (x, y) = (c as f64 / 15.0, r as f64 / 15.0);
        [0.5 + 0.4 * (3.0 * x).sin(), y * y, 0.3 + 0.5 * x * y]
    })
    .unwrap();
    let mut worst = 0.0f64;
    for seed in 0..STATES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, _, p) = jittered_grid(5, 0.08, &mut rng);
        let colors: Vec<[f64; 3]> = (0..25).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let grid = DeformableImage::new(5, 5, colors, p.clone()).unwrap();
        let cfg = CompactConfig { samples: 200, seed, ..CompactConfig::default() };
        let mut obj = ImageObjective::new(target.clone(), &grid, cfg).unwrap();
        obj.prepare(0).unwrap();
        let mut g = vec![0.0; p.len()];
        obj.value_and_gradient(&p, &mut g);
        worst = worst.max(fd_error(|x| obj.value(x), &g, &p));
    }
    worst
}

/// Every gradient check, by name.
pub fn all_gradient_errors() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for kind in TOY_KINDS {
        out.push((format!("{} positions", kind.name()), toy_gradient_error(kind)));
        for mode in [WeightMode::PerVertex, WeightMode::PerDimension] {
            out.push((format!("{} weights {mode:?}", kind.name()), toy_weight_gradient_error(kind, mode)));
        }
    }
    for kind in EnergyKind::<f64>::UV_KINDS {
        out.push((format!("{} positions", kind.name()), uv_gradient_error(kind)));
        out.push((format!("{} weights", kind.name()), uv_weight_gradient_error(kind)));
    }
    out.push(("equiareal square".into(), equiareal_square_error()));
    out.push(("barrier".into(), barrier_gradient_error()));
    out.push(("image-l1 positions".into(), image_gradient_error()));
    out
}

/// Star-shaped ring around `center`: sorted angles with random radii.
pub fn star_ring(rng: &mut ChaCha8Rng, center: [f64; 2]) -> Vec<[f64; 2]> {
    let n = rng.gen_range(3..=8);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles
        .iter()
        .map(|&a| {
            let r = rng.gen_range(0.2..1.5);
            [center[0] + r * a.cos(), center[1] + r * a.sin()]
        })
        .collect()
}

/// Intersection of the open left half-planes of each directed edge, with the
/// distance to the nearest edge line.
pub fn half_plane_oracle(p: [f64; 2], ring: &[[f64; 2]], closed: bool) -> (bool, f64) {
    let n = ring.len();
    let edges = if closed { n } else { n - 1 };
    let mut inside = true;
    let mut nearest = f64::INFINITY;
    for k in 0..edges {
        let (a, b) = (ring[k], ring[(k + 1) % n]);
        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
        let len = ex.hypot(ey);
        // Inward normal of a counter-clockwise edge.
        let (nx, ny) = (-ey / len, ex / len);
        let dist = nx * (p[0] - a[0]) + ny * (p[1] - a[1]);
        inside &= dist > 0.0;
        nearest = nearest.min(dist.abs());
    }
    (inside, nearest)
}

pub struct KernelTally {
    pub rings: usize,
    pub checked: usize,
    pub inside: usize,
    pub disagreements: usize,
}

/// `in_kernel` against the half-plane oracle on 1000 random rings, nine
/// candidates each (the ring center plus eight random points).
pub fn kernel_oracle_run(closed: bool, seed: u64) -> KernelTally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = KernelTally { rings: 1000, checked: 0, inside: 0, disagreements: 0 };
    for _ in 0..t.rings {
        let center = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let ring = star_ring(&mut rng, center);
        let mut candidates = vec![center];
        candidates.extend((0..8).map(|_| [center[0] + rng.gen_range(-1.0..1.0), center[1] + rng.gen_range(-1.0..1.0)]));
        for p in candidates {
            let (expected, nearest) = half_plane_oracle(p, &ring, closed);
            // Within round-off of an edge line both answers are legitimate.
            if nearest < 1e-9 {
                continue;
            }
            t.checked += 1;
            t.inside += expected as usize;
            if in_kernel(p, &ring, closed).unwrap() != expected {
                t.disagreements += 1;
            }
        }
    }
    t
}

/// Flipped triangles, interior residual and worst boundary radius error of
/// the Tutte embedding.
pub fn tutte_check(mesh: &TriangleMesh3D) -> (usize, f64, f64) {
    let uv = tutte_embed(mesh).unwrap();
    let (c, _) = uv_problem(mesh, &uv).unwrap();
    let flipped = detect_inversions(&c, c.positions()).len();
    let boundary = boundary_loop(mesh).unwrap();
    let mut on = vec![false; mesh.vertex_count()];
    let mut radius = 0.0f64;
    for &v in &boundary {
        on[v] = true;
        radius = radius.max((uv[v][0].hypot(uv[v][1]) - 1.0).abs());
    }
    (flipped, tutte_residual(&uv, &mesh.adjacency(), &on), radius)
}

/// The disk meshes used across the suite.
pub fn test_disk_meshes() -> Vec<(String, TriangleMesh3D)> {
    let mut out: Vec<(String, TriangleMesh3D)> = [(3, 0.0, 0), (5, 0.3, 1), (12, 0.35, 2), (25, 0.3, 3), (40, 0.3, 1)]
        .iter()
        .map(|&(n, j, s)| (format!("height field {n}x{n}"), height_field_mesh(n, j, s).unwrap()))
        .collect();
    out.push(("cap.obj".into(), diffgrid::uv::load_obj(data("cap.obj")).unwrap()));
    out
}
