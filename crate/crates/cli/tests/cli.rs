use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diffgrid::imagewarp::{bilinear_resize, DeformableImage, RasterImage};
use serde_json::Value;
use tempfile::TempDir;

fn diffgrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffgrid")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data").join(name)
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Energies column of a loss CSV.
fn energies(csv: &str) -> Vec<f64> {
    csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect()
}

/// Fan around the origin with uneven spokes.
fn write_fan(path: &Path) {
    let mut text = String::from("v 0 0 0\n");
    for deg in [0.0f64, 40.0, 110.0, 180.0, 235.0, 300.0] {
        text.push_str(&format!("v {} {} 0\n", deg.to_radians().cos(), deg.to_radians().sin()));
    }
    for i in 0..6 {
        text.push_str(&format!("f 1 {} {}\n", 2 + i, 2 + (i + 1) % 6));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn bad_flags_exit_2() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    assert_eq!(code(&diffgrid(&["toy", "--loss", "z", "--out", s(&out)])), 2);
    assert_eq!(code(&diffgrid(&["toy", "--loss", "x", "--res", "2", "--out", s(&out)])), 2);
    assert_eq!(code(&diffgrid(&["toy", "--loss", "x", "--lr", "-1", "--out", s(&out)])), 2);
    assert_eq!(code(&diffgrid(&["frobnicate"])), 2);
}

#[test]
fn non_disk_mesh_exits_3_with_manifest() {
    let tmp = TempDir::new().unwrap();
    let out = diffgrid(&["uv", s(&data("annulus.obj")), "--energy", "equilateral", "--out", s(tmp.path())]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("disk"));
    let m = manifest(tmp.path());
    assert_eq!(m["status"], "error");
    assert!(m["error"].as_str().unwrap().contains("boundary"));
}

#[test]
fn missing_input_exits_4_with_manifest() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope.ppm");
    let run = tmp.path().join("compact");
    assert_eq!(code(&diffgrid(&["compact", s(&missing), "--out", s(&run)])), 4);
    assert_eq!(manifest(&run)["status"], "error");
    let run = tmp.path().join("reconstruct");
    let dgim = tmp.path().join("nope.dgim");
    assert_eq!(code(&diffgrid(&["reconstruct", s(&dgim), "--height", "4", "--width", "4", "--out", s(&run)])), 4);
    assert_eq!(manifest(&run)["command"], "reconstruct");
}

#[test]
fn toy_x_writes_artifacts_and_descends() {
    let tmp = TempDir::new().unwrap();
    let out = diffgrid(&["toy", "--loss", "x", "--res", "16", "--out", s(tmp.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let e = energies(&fs::read_to_string(tmp.path().join("loss.csv")).unwrap());
    assert_eq!(e.len(), 2000);
    let last = *e.last().unwrap();
    for k in [1, 10, 100, 1000] {
        assert!(last < e[k], "step {k}: {} vs {last}", e[k]);
    }
    assert!(fs::read_to_string(tmp.path().join("grid.svg")).unwrap().contains("<polygon"));
    let m = manifest(tmp.path());
    assert_eq!(m["status"], "ok");
    assert_eq!(m["metrics"]["injective"], true);
    assert_eq!(m["config"]["res"], 16);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn toy_spin_without_checks_is_not_injective() {
    let tmp = TempDir::new().unwrap();
    let args = ["toy", "--loss", "spin", "--res", "8", "--lr", "1e-2", "--no-checks", "--out", s(tmp.path())];
    assert_eq!(code(&diffgrid(&args)), 0);
    assert_eq!(manifest(tmp.path())["metrics"]["injective"], false);
}

#[test]
fn same_seed_gives_identical_csvs() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let args = ["toy", "--loss", "spin", "--res", "8", "--iters", "300", "--noise", "0.3", "--seed", "4", "--out", s(dir)];
        assert_eq!(code(&diffgrid(&args)), 0);
    }
    assert_eq!(fs::read(a.join("loss.csv")).unwrap(), fs::read(b.join("loss.csv")).unwrap());
    assert_eq!(fs::read(a.join("grid.svg")).unwrap(), fs::read(b.join("grid.svg")).unwrap());

    let cap = data("cap.obj");
    for dir in [&a, &b] {
        let args = ["uv", s(&cap), "--energy", "equiareal", "--iters", "200", "--out", s(dir)];
        assert_eq!(code(&diffgrid(&args)), 0);
    }
    for f in ["energy.csv", "histograms.csv", "histograms_tutte.csv", "uv.obj"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn uv_equilateral_on_fan_descends() {
    let tmp = TempDir::new().unwrap();
    let fan = tmp.path().join("fan.obj");
    write_fan(&fan);
    let run = tmp.path().join("run");
    let out = diffgrid(&["uv", s(&fan), "--energy", "equilateral", "--iters", "400", "--out", s(&run)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&run);
    assert!(m["metrics"]["final_energy"].as_f64().unwrap() < m["metrics"]["initial_energy"].as_f64().unwrap());
    let obj = fs::read_to_string(run.join("uv.obj")).unwrap();
    assert_eq!(obj.lines().filter(|l| l.starts_with("vt ")).count(), 7);
}

#[test]
fn uv_sym_dirichlet_has_no_flips() {
    let tmp = TempDir::new().unwrap();
    let out = diffgrid(&["uv", s(&data("cap.obj")), "--energy", "sym-dirichlet", "--iters", "1000", "--out", s(tmp.path())]);
    assert_eq!(code(&out), 0);
    let m = manifest(tmp.path());
    assert_eq!(m["metrics"]["flipped"], 0);
    let hist = fs::read_to_string(tmp.path().join("histograms.csv")).unwrap();
    assert_eq!(hist.lines().count(), 1 + 2 * 20);
    for f in ["energy.csv", "histograms_tutte.csv", "uv.svg"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
}

#[test]
fn reconstruct_of_undeformed_linear_grid_matches_vertex_colors() {
    let tmp = TempDir::new().unwrap();
    let target = RasterImage::from_fn(9, 13, |r, c| [r as f64 / 8.0, c as f64 / 12.0, 0.5 + (r as f64 - c as f64) / 40.0]).unwrap();
    let grid = DeformableImage::from_target(&target, 9, 13).unwrap();
    let dgim = tmp.path().join("g.dgim");
    grid.save(&dgim).unwrap();
    let run = tmp.path().join("run");
    assert_eq!(code(&diffgrid(&["reconstruct", s(&dgim), "--height", "9", "--width", "13", "--out", s(&run)])), 0);
    let img = RasterImage::load_ppm(run.join("reconstruct.ppm")).unwrap();
    // Border pixels only see half their footprint.
    for r in 1..8 {
        for c in 1..12 {
            let (got, want) = (img.pixel(r, c), grid.colors()[r * 13 + c]);
            for ch in 0..3 {
                assert!((got[ch] - want[ch]).abs() <= 3.0 / 255.0, "({r},{c}) {got:?} {want:?}");
            }
        }
    }
}

#[test]
fn photo_pipeline_beats_bilinear() {
    let tmp = TempDir::new().unwrap();
    let full = RasterImage::load_ppm(data("chelsea.ppm")).unwrap();
    let photo = tmp.path().join("chelsea.ppm");
    bilinear_resize(&full, 128, 192).unwrap().save_ppm(&photo).unwrap();
    let run = tmp.path().join("compact");
    assert_eq!(code(&diffgrid(&["compact", s(&photo), "--scale", "0.5", "--samples", "16384", "--out", s(&run)])), 0);
    assert_eq!(manifest(&run)["metrics"]["grid_height"], 64);
    let dgim = run.join("compact.dgim");

    let recon = tmp.path().join("reconstruct");
    assert_eq!(code(&diffgrid(&["reconstruct", s(&dgim), "--height", "128", "--width", "192", "--out", s(&recon)])), 0);
    assert_eq!(RasterImage::load_ppm(recon.join("reconstruct.ppm")).unwrap().width(), 192);

    let mut csvs = Vec::new();
    for name in ["eval1", "eval2"] {
        let eval = tmp.path().join(name);
        let m = run.join("manifest.json");
        assert_eq!(code(&diffgrid(&["eval", s(&photo), s(&dgim), "--compact-manifest", s(&m), "--out", s(&eval)])), 0);
        let csv = fs::read_to_string(eval.join("metrics.csv")).unwrap();
        assert!(csv.starts_with("image,method,psnr_db,seconds\n"));
        csvs.push(csv);
        let metrics = &manifest(&eval)["metrics"];
        assert!(metrics["psnr_deform"].as_f64().unwrap() > metrics["psnr_bilinear"].as_f64().unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}
