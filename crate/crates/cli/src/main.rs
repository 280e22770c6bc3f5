use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use diffgrid::imagewarp::{
    bilinear_baseline, compact, metrics_csv, psnr, reconstruct, CompactConfig, DeformableImage, MetricRow, RasterImage,
    EVAL_SAMPLES_PER_CELL, EVAL_SEED,
};
use diffgrid::optim::{optimize_toy, AdamHyper, OptConfig, Parameterization, Schedule, StepReport};
use diffgrid::uv::{histogram_report, load_obj, optimize_uv, save_obj, tutte_embed};
use diffgrid::{EnergyKind, Error, WeightMode};

mod svg;

#[derive(Parser)]
#[command(name = "diffgrid", version, about = "Inversion-free differential grid and mesh deformation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deform a square grid under a toy loss.
    Toy(ToyArgs),
    /// Flatten a disk-topology OBJ mesh into the unit disk.
    Uv(UvArgs),
    /// Compact an image into a deformable low-resolution grid (DGIM).
    Compact(CompactArgs),
    /// Render a DGIM file to a PPM image.
    Reconstruct(ReconstructArgs),
    /// Compare a DGIM reconstruction and bilinear resampling against the original.
    Eval(EvalArgs),
}

#[derive(Args, Serialize)]
struct Common {
    /// Run directory for all artifacts.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum ToyLoss {
    X,
    Xy,
    Spin,
}

#[derive(Args, Serialize)]
struct ToyArgs {
    #[arg(long, value_enum)]
    loss: ToyLoss,
    #[arg(long, default_value_t = 16)]
    res: usize,
    /// Color steps (global steps with --line-search).
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, conflicts_with = "per_dimension")]
    per_vertex: bool,
    #[arg(long)]
    per_dimension: bool,
    #[arg(long, conflicts_with = "no_checks")]
    line_search: bool,
    /// Disable inversion resets and the barrier.
    #[arg(long)]
    no_checks: bool,
    /// Optimize position offsets instead of convex-sum weights.
    #[arg(long)]
    direct: bool,
    /// Uniform noise on the initial raw weights.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum UvEnergy {
    AnglePreserving,
    AreaPreserving,
    SymDirichlet,
    Equilateral,
    Equiareal,
}

impl UvEnergy {
    fn kind(self) -> EnergyKind<f64> {
        match self {
            UvEnergy::AnglePreserving => EnergyKind::AnglePreserving,
            UvEnergy::AreaPreserving => EnergyKind::AreaPreserving,
            UvEnergy::SymDirichlet => EnergyKind::SymmetricDirichlet,
            UvEnergy::Equilateral => EnergyKind::Equilateral,
            UvEnergy::Equiareal => EnergyKind::Equiareal,
        }
    }
}

#[derive(Args, Serialize)]
struct UvArgs {
    input: PathBuf,
    #[arg(long, value_enum)]
    energy: UvEnergy,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long)]
    direct: bool,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
struct CompactArgs {
    /// PPM, or any PNG.
    input: PathBuf,
    /// Grid size relative to the image.
    #[arg(long, default_value_t = 0.5)]
    scale: f64,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long)]
    no_blur: bool,
    #[arg(long, default_value_t = 1 << 16)]
    samples: usize,
    /// Learning rate of the differential weights.
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
struct ReconstructArgs {
    input: PathBuf,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long, default_value_t = EVAL_SAMPLES_PER_CELL)]
    samples_per_cell: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    /// Original image.
    target: PathBuf,
    /// Compacted grid of the same image.
    dgim: PathBuf,
    /// Manifest of the compact run, for its timing.
    #[arg(long)]
    compact_manifest: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

/// Everything needed to rerun a command.
#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    config: Value,
    seed: u64,
    inputs: Vec<String>,
    outputs: Vec<String>,
    wall_seconds: f64,
    status: &'static str,
    error: Option<String>,
    metrics: Value,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) => 2,
            Error::NotADisk { .. } => 3,
            Error::Io(_) | Error::Parse { .. } => 4,
            _ => 5,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

/// Collects outputs and metrics, then writes the manifest on every path.
struct Run {
    dir: PathBuf,
    outputs: Vec<String>,
    metrics: serde_json::Map<String, Value>,
}

impl Run {
    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, Failure> {
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        self.outputs.push(path.display().to_string());
        Ok(path)
    }

    fn metric(&mut self, key: &str, value: impl Serialize) {
        self.metrics.insert(key.to_string(), json!(value));
    }
}

fn execute(
    command: &'static str,
    config: Value,
    seed: u64,
    inputs: &[&Path],
    dir: &Path,
    body: impl FnOnce(&mut Run) -> Result<(), Failure>,
) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    let start = Instant::now();
    let mut run = Run { dir: dir.to_path_buf(), outputs: Vec::new(), metrics: Default::default() };
    let result = body(&mut run);
    let manifest = RunManifest {
        command,
        config,
        seed,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: run.outputs,
        wall_seconds: start.elapsed().as_secs_f64(),
        status: if result.is_ok() { "ok" } else { "error" },
        error: result.as_ref().err().map(|f| f.message.clone()),
        metrics: Value::Object(run.metrics),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join("manifest.json"), text + "\n")?;
    result
}

fn reports_csv(reports: &[StepReport<f64>]) -> String {
    let mut s = String::from("iteration,color,energy,barrier,inverted,resets,retries,skipped\n");
    for r in reports {
        s.push_str(&format!(
            "{},{},{:.9e},{:.9e},{},{},{},{}\n",
            r.iteration, r.color, r.energy, r.barrier, r.inverted, r.resets, r.retries, r.skipped as u8
        ));
    }
    s
}

fn toy(args: &ToyArgs) -> Result<(), Failure> {
    if args.res < 3 {
        return Err(usage("--res must be at least 3"));
    }
    let kind = match args.loss {
        ToyLoss::X => EnergyKind::LX,
        ToyLoss::Xy => EnergyKind::LXY,
        ToyLoss::Spin => EnergyKind::spin(),
    };
    let config = OptConfig {
        adam: AdamHyper::new(args.lr),
        weight_mode: if args.per_dimension { WeightMode::PerDimension } else { WeightMode::PerVertex },
        schedule: if args.line_search { Schedule::line_search() } else { Schedule::Alternating },
        parameterization: if args.direct { Parameterization::Direct } else { Parameterization::ConvexSum },
        checks: !args.no_checks,
        seed: args.common.seed,
        init_noise: args.noise,
        ..OptConfig::new(args.iters)
    };
    config.validate()?;
    execute("toy", json!(args), args.common.seed, &[], &args.common.out, |run| {
        let (complex, result) = optimize_toy(kind, args.res, &config)?;
        run.write("loss.csv", reports_csv(&result.reports))?;
        let cells: Vec<Vec<[f64; 2]>> = (0..complex.cell_count())
            .map(|c| complex.cell(c).iter().map(|&v| [result.positions[2 * v], result.positions[2 * v + 1]]).collect())
            .collect();
        run.write("grid.svg", svg::wireframe(&cells, [-1.0, -1.0, 1.0, 1.0]))?;
        run.metric("final_energy", result.final_energy);
        run.metric("injective", result.injective);
        run.metric("total_resets", result.total_resets);
        run.metric("skipped_steps", result.skipped_steps);
        run.metric("optimize_seconds", result.seconds);
        println!(
            "final energy {:.6} injective {} seconds {:.2}",
            result.final_energy, result.injective, result.seconds
        );
        Ok(())
    })
}

fn uv(args: &UvArgs) -> Result<(), Failure> {
    if args.bins == 0 {
        return Err(usage("--bins must be positive"));
    }
    let config = OptConfig {
        adam: AdamHyper::new(args.lr),
        parameterization: if args.direct { Parameterization::Direct } else { Parameterization::ConvexSum },
        seed: args.common.seed,
        ..OptConfig::new(args.iters)
    };
    config.validate()?;
    execute("uv", json!(args), args.common.seed, &[&args.input], &args.common.out, |run| {
        let mesh = load_obj(&args.input)?;
        let init = tutte_embed(&mesh)?;
        run.write("histograms_tutte.csv", histogram_report(&init, &mesh, args.bins).to_csv())?;
        let result = optimize_uv(&mesh, args.energy.kind(), &config)?;
        run.write("energy.csv", reports_csv(&result.run.reports))?;
        run.write("histograms.csv", histogram_report(&result.uv, &mesh, args.bins).to_csv())?;
        let obj = run.dir.join("uv.obj");
        save_obj(&obj, &mesh, Some(&result.uv))?;
        run.outputs.push(obj.display().to_string());
        let tris: Vec<Vec<[f64; 2]>> =
            mesh.triangles().iter().map(|t| t.iter().map(|&v| result.uv[v]).collect()).collect();
        run.write("uv.svg", svg::wireframe(&tris, [-1.0, -1.0, 1.0, 1.0]))?;
        run.metric("energy", args.energy.kind().name());
        run.metric("initial_energy", result.initial_energy);
        run.metric("final_energy", result.final_energy);
        run.metric("flipped", result.flipped);
        run.metric("optimize_seconds", result.run.seconds);
        println!(
            "{}: energy {:.6} -> {:.6}, flipped {}",
            args.energy.kind().name(),
            result.initial_energy,
            result.final_energy,
            result.flipped
        );
        if result.flipped > 0 {
            return Err(Failure { code: 5, message: format!("{} flipped triangles", result.flipped) });
        }
        Ok(())
    })
}

fn load_image(path: &Path) -> Result<RasterImage, Failure> {
    let is_ppm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    if is_ppm {
        return Ok(RasterImage::load_ppm(path)?);
    }
    let img = image::open(path)
        .map_err(|e| Failure { code: 4, message: format!("{}: {e}", path.display()) })?
        .to_rgb8();
    let data = img.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
    Ok(RasterImage::new(img.height() as usize, img.width() as usize, data)?)
}

fn grid_size(n: usize, scale: f64) -> usize {
    ((n as f64 * scale).round() as usize).max(2)
}

fn compact_cmd(args: &CompactArgs) -> Result<(), Failure> {
    if !(args.scale > 0.0 && args.scale <= 1.0) {
        return Err(usage("--scale must lie in (0, 1]"));
    }
    let config = CompactConfig {
        iterations: args.iters,
        samples: args.samples,
        weight_lr: args.lr,
        blur: !args.no_blur,
        seed: args.common.seed,
        ..CompactConfig::default()
    };
    config.validate()?;
    execute("compact", json!(args), args.common.seed, &[&args.input], &args.common.out, |run| {
        let target = load_image(&args.input)?;
        let (gh, gw) = (grid_size(target.height(), args.scale), grid_size(target.width(), args.scale));
        let result = compact(&target, gh, gw, &config)?;
        let path = run.dir.join("compact.dgim");
        result.image.save(&path)?;
        run.outputs.push(path.display().to_string());
        run.write("loss.csv", reports_csv(&result.run.reports))?;
        run.metric("target_height", target.height());
        run.metric("target_width", target.width());
        run.metric("grid_height", gh);
        run.metric("grid_width", gw);
        run.metric("final_loss", result.run.final_energy);
        run.metric("injective", result.run.injective);
        run.metric("optimize_seconds", result.run.seconds);
        println!("{gh}x{gw} grid, loss {:.6}, seconds {:.2}", result.run.final_energy, result.run.seconds);
        Ok(())
    })
}

fn reconstruct_cmd(args: &ReconstructArgs) -> Result<(), Failure> {
    if args.height < 2 || args.width < 2 || args.samples_per_cell == 0 {
        return Err(usage("output size must be at least 2x2 with positive sampling"));
    }
    execute("reconstruct", json!(args), args.common.seed, &[&args.input], &args.common.out, |run| {
        let grid = DeformableImage::load(&args.input)?;
        let img = reconstruct(&grid, args.height, args.width, args.samples_per_cell, args.common.seed)?;
        let path = run.dir.join("reconstruct.ppm");
        img.save_ppm(&path)?;
        run.outputs.push(path.display().to_string());
        Ok(())
    })
}

fn eval_cmd(args: &EvalArgs) -> Result<(), Failure> {
    let mut inputs: Vec<&Path> = vec![&args.target, &args.dgim];
    if let Some(m) = &args.compact_manifest {
        inputs.push(m);
    }
    execute("eval", json!(args), args.common.seed, &inputs, &args.common.out, |run| {
        let target = load_image(&args.target)?;
        let grid = DeformableImage::load(&args.dgim)?;
        let compact_seconds = match &args.compact_manifest {
            Some(p) => {
                let v: Value = serde_json::from_str(&fs::read_to_string(p)?)
                    .map_err(|e| Failure { code: 4, message: format!("{}: {e}", p.display()) })?;
                v["wall_seconds"].as_f64().unwrap_or(0.0)
            }
            None => 0.0,
        };
        let start = Instant::now();
        let baseline = bilinear_baseline(&target, grid.height(), grid.width())?;
        let bilinear_seconds = start.elapsed().as_secs_f64();
        let recon = reconstruct(&grid, target.height(), target.width(), EVAL_SAMPLES_PER_CELL, EVAL_SEED)?;
        let name = args.target.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
        let rows = vec![
            MetricRow { image: name.clone(), method: "deform".into(), psnr_db: psnr(&recon, &target)?, seconds: compact_seconds },
            MetricRow { image: name, method: "bilinear".into(), psnr_db: psnr(&baseline, &target)?, seconds: bilinear_seconds },
        ];
        run.write("metrics.csv", metrics_csv(&rows))?;
        run.metric("psnr_deform", rows[0].psnr_db);
        run.metric("psnr_bilinear", rows[1].psnr_db);
        println!("deform {:.3} dB, bilinear {:.3} dB", rows[0].psnr_db, rows[1].psnr_db);
        Ok(())
    })
}

fn configure_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("DIFFGRID_THREADS") {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| usage("DIFFGRID_THREADS must be a positive integer"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure { code: 5, message: e.to_string() })?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Toy(a) => toy(a),
        Command::Uv(a) => uv(a),
        Command::Compact(a) => compact_cmd(a),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::Eval(a) => eval_cmd(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
