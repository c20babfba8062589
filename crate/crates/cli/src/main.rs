use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sparsepat::acoustics::{
    default_radius, make_circular_array_with, required_detectors, simulate_forward, time_reverse, Coincident, Medium,
    SensorData, SensorSidecar,
};
use sparsepat::metrics::{reports_to_csv, score_pairs, QualityReport};
use sparsepat::networks::{build_model, load_model, save_model, ArchKind, ArchSpec, Model};
use sparsepat::pipeline::{
    fine_tune, make_dataset, panel, restore, run_experiment, train, DatasetManifest, DatasetSpec, ExperimentConfig,
    ExperimentName, Pair, PhantomKind, Scale, TrainConfig,
};
use sparsepat::Image2D;

mod config;

use config::{write_run_json, FileConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] sparsepat::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Sparse-view photoacoustic tomography: phantoms, k-space simulation, time
/// reversal and UNet / FD-UNet artifact removal.
#[derive(Parser, Debug)]
#[command(name = "sparsepat", version)]
struct Cli {
    /// TOML file with default values; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every other seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sample generation.
    #[arg(long, global = true, env = "SPARSEPAT_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write one phantom as PTNS and PGM.
    Phantom(PhantomArgs),
    /// Forward-simulate detector data from an initial pressure image.
    Simulate(SimulateArgs),
    /// Time-reversal reconstruction from detector data.
    Reconstruct(ReconstructArgs),
    /// Generate (TR image, ground truth) pairs with a manifest.
    MakeDataset(DatasetArgs),
    /// Train a UNet or FD-UNet on a dataset split.
    Train(TrainArgs),
    /// Continue training a saved model on another dataset split.
    FineTune(FineTuneArgs),
    /// Score a model (or plain TR with `--model none`) on a dataset split.
    Eval(EvalArgs),
    /// TR / UNet / FD-UNet comparison table and image panels.
    Report(ReportArgs),
    /// Run one of the built-in experiments.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct PhantomArgs {
    /// circles, shepp_logan, vessels, vessels_complex or vessels_held_out.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Initial pressure image (PTNS).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    detectors: Option<usize>,
    /// Ring radius in pixels; defaults to 60/128 of the grid.
    #[arg(long)]
    radius: Option<f64>,
    /// Drop detectors that round onto an occupied pixel instead of failing.
    #[arg(long)]
    merge_coincident: bool,
    /// Sensor data output (PTNS); a JSON sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    /// Sensor data written by `simulate`.
    #[arg(long)]
    input: PathBuf,
    /// Reconstructed image (PTNS); a PGM preview is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DatasetArgs {
    #[arg(long)]
    kind: String,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    detectors: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    /// Consecutive splits, e.g. `train=200,test=50`; overrides `--n`.
    #[arg(long)]
    splits: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ScheduleArgs {
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// unet or fd_unet.
    #[arg(long)]
    arch: String,
    #[arg(long)]
    f1: Option<usize>,
    #[arg(long)]
    k1: Option<usize>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "train")]
    split: String,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FineTuneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "fine_tune")]
    split: String,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Saved model directory, or `none` for the TR baseline.
    #[arg(long)]
    model: String,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// CSV output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    unet: PathBuf,
    #[arg(long)]
    fd_unet: PathBuf,
    /// Number of image panels to render.
    #[arg(long, default_value_t = 4)]
    panels: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// exp1_circles, exp2_transfer or exp3_vessels.
    #[arg(long)]
    name: String,
    /// full or desk.
    #[arg(long, default_value = "desk")]
    scale: String,
    #[arg(long)]
    out: PathBuf,
}

struct Ctx {
    file: FileConfig,
    seed: u64,
    jobs: usize,
}

fn require_input(path: &Path) -> CliResult {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("input {} does not exist", path.display())))
    }
}

fn parse_kind(s: &str) -> CliResult<PhantomKind> {
    s.parse().map_err(|_| {
        CliError::Usage(format!(
            "unknown phantom kind {s:?}; valid kinds: {}",
            PhantomKind::names()
        ))
    })
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn ensure_parent(path: &Path) -> CliResult {
    let dir = parent_dir(path);
    fs::create_dir_all(&dir).map_err(|e| sparsepat::Error::io(format!("creating {}", dir.display()), e))?;
    Ok(())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| sparsepat::Error::io(format!("writing {}", path.display()), e))?;
    Ok(())
}

fn schedule(ctx: &Ctx, args: &ScheduleArgs) -> CliResult<TrainConfig> {
    let base = ctx.file.overlay("train", TrainConfig::default())?;
    Ok(TrainConfig {
        iterations: args.iters.unwrap_or(base.iterations),
        learning_rate: args.lr.unwrap_or(base.learning_rate),
        batch_size: args.batch.unwrap_or(base.batch_size),
        seed: ctx.seed,
        ..base
    })
}

fn load_split(data: &Path, split: &str) -> CliResult<Vec<Pair>> {
    require_input(data)?;
    let manifest = DatasetManifest::read(data)?;
    Ok(manifest.load_split(data, split)?)
}

fn cmd_phantom(ctx: &Ctx, a: &PhantomArgs) -> CliResult {
    let kind = parse_kind(&a.kind)?;
    let size = ctx.file.pick(a.size, "size", 128)?;
    let img = kind.generate(ctx.seed, size)?;
    let stem = a.out.join(format!("{kind}_s{}", ctx.seed));
    img.write_ptns(stem.with_extension("ptns"))?;
    img.write_pgm(stem.with_extension("pgm"))?;
    write_run_json(&a.out, "phantom", json!({"kind": kind, "size": size, "seed": ctx.seed}))?;
    println!("{}", stem.with_extension("ptns").display());
    Ok(())
}

fn cmd_simulate(ctx: &Ctx, a: &SimulateArgs) -> CliResult {
    require_input(&a.input)?;
    let p0 = Image2D::read_ptns(&a.input)?;
    let grid = p0.size();
    let detectors = ctx.file.pick(a.detectors, "detectors", 30)?;
    let radius = ctx.file.pick(a.radius, "radius", default_radius(grid))?;
    let medium = Medium::for_grid(grid);
    let c = grid as f64 / 2.0;
    let mode = if a.merge_coincident {
        Coincident::Merge
    } else {
        Coincident::Reject
    };
    let sensors = make_circular_array_with(detectors, radius, (c, c), grid, mode)?;
    let data = simulate_forward(&p0, &medium, &sensors)?;
    let sidecar = SensorSidecar::new(&medium, &sensors, Some(ctx.seed));
    ensure_parent(&a.out)?;
    data.write(&a.out, &sidecar)?;
    let settings = json!({
        "input": a.input, "detectors": detectors, "placed": sensors.len(), "radius_px": radius,
        "required_detectors": required_detectors(grid), "medium": medium,
    });
    println!("{}", serde_json::to_string_pretty(&settings).unwrap_or_default());
    write_run_json(&parent_dir(&a.out), "simulate", settings)
}

fn cmd_reconstruct(_ctx: &Ctx, a: &ReconstructArgs) -> CliResult {
    require_input(&a.input)?;
    let (data, sidecar) = SensorData::read(&a.input)?;
    let medium = sidecar.medium();
    let image = time_reverse(&data, &medium, &sidecar.sensors(), sidecar.grid)?;
    ensure_parent(&a.out)?;
    image.write_ptns(&a.out)?;
    image.write_pgm(a.out.with_extension("pgm"))?;
    let settings = json!({"input": a.input, "medium": medium, "grid": sidecar.grid, "detectors": data.n_sensors()});
    println!("{}", serde_json::to_string_pretty(&settings).unwrap_or_default());
    write_run_json(&parent_dir(&a.out), "reconstruct", settings)
}

fn parse_splits(s: &str) -> CliResult<Vec<(String, usize)>> {
    s.split(',')
        .map(|part| {
            let (name, n) = part
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("split {part:?} is not name=count")))?;
            let n = n
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("split {part:?} has a non-numeric count")))?;
            Ok((name.trim().to_string(), n))
        })
        .collect()
}

fn cmd_make_dataset(ctx: &Ctx, a: &DatasetArgs) -> CliResult {
    let kind = parse_kind(&a.kind)?;
    let grid = ctx.file.pick(a.grid, "grid", 128)?;
    let detectors = ctx.file.pick(a.detectors, "detectors", 30)?;
    let n = ctx.file.pick(a.n, "n", 10)?;
    let radius = ctx.file.pick(a.radius, "radius", default_radius(grid))?;
    let mut spec = DatasetSpec::new(kind, n, detectors, grid, ctx.seed).with_radius(radius);
    if let Some(s) = a.splits.as_deref() {
        spec.splits = parse_splits(s)?;
    } else {
        spec.splits = vec![("all".into(), n)];
    }
    let manifest = make_dataset(&spec, &a.out, ctx.jobs)?;
    write_run_json(&a.out, "make-dataset", json!({"spec": spec, "jobs": ctx.jobs}))?;
    println!("{} samples -> {}", manifest.samples.len(), a.out.display());
    Ok(())
}

fn save_trained(model: &Model<f32>, out: &Path, log: &sparsepat::pipeline::TrainLog) -> CliResult {
    save_model(model, out)?;
    write_file(&out.join("loss.csv"), log.to_csv())
}

fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> CliResult {
    let kind: ArchKind = a
        .arch
        .parse()
        .map_err(|e: sparsepat::Error| CliError::Usage(e.to_string()))?;
    let f1 = ctx.file.pick(a.f1, "f1", 8)?;
    let arch = match kind {
        ArchKind::Unet => ArchSpec::unet(f1),
        ArchKind::FdUnet => ArchSpec::fd_unet(f1, ctx.file.pick(a.k1, "k1", f1 / 8)?),
    };
    let cfg = schedule(ctx, &a.schedule)?;
    let pairs = load_split(&a.data, &a.split)?;
    let mut model = build_model::<f32>(&arch, ctx.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let log = train(&mut model, &pairs, &cfg)?;
    save_trained(&model, &a.out, &log)?;
    write_run_json(
        &a.out,
        "train",
        json!({"arch": arch, "train": cfg, "data": a.data, "split": a.split, "params": model.param_count()}),
    )
}

fn cmd_fine_tune(ctx: &Ctx, a: &FineTuneArgs) -> CliResult {
    require_input(&a.model)?;
    let mut model = load_model::<f32>(&a.model)?;
    let cfg = schedule(ctx, &a.schedule)?;
    let pairs = load_split(&a.data, &a.split)?;
    let log = fine_tune(&mut model, &pairs, &cfg, cfg.iterations)?;
    save_trained(&model, &a.out, &log)?;
    write_run_json(
        &a.out,
        "fine-tune",
        json!({"model": a.model, "train": cfg, "data": a.data, "split": a.split}),
    )
}

fn model_report(
    model: &Model<f32>,
    method: &str,
    detectors: usize,
    pairs: &[Pair],
) -> CliResult<(QualityReport, Vec<Image2D>)> {
    let inputs: Vec<&Image2D> = pairs.iter().map(|p| &p.x).collect();
    let restored = restore(model, &inputs)?;
    let targets: Vec<Image2D> = pairs.iter().map(|p| p.y.clone()).collect();
    let mut report = QualityReport::new(method, detectors);
    if let Some(arch) = model.arch() {
        report.f1 = Some(arch.f1);
        report.k1 = arch.k1;
    }
    report.params = Some(model.param_count());
    Ok((score_pairs(report, &restored, &targets)?, restored))
}

fn tr_report(detectors: usize, pairs: &[Pair]) -> CliResult<QualityReport> {
    let xs: Vec<Image2D> = pairs.iter().map(|p| p.x.clone()).collect();
    let ys: Vec<Image2D> = pairs.iter().map(|p| p.y.clone()).collect();
    Ok(score_pairs(QualityReport::new("TR", detectors), &xs, &ys)?)
}

fn cmd_eval(_ctx: &Ctx, a: &EvalArgs) -> CliResult {
    let pairs = load_split(&a.data, &a.split)?;
    let detectors = DatasetManifest::read(&a.data)?.spec.detectors;
    let report = if a.model == "none" {
        tr_report(detectors, &pairs)?
    } else {
        let dir = PathBuf::from(&a.model);
        require_input(&dir)?;
        let model = load_model::<f32>(&dir)?;
        let label = model.arch().map(|s| s.kind.label()).unwrap_or("model");
        model_report(&model, label, detectors, &pairs)?.0
    };
    let csv = reports_to_csv(std::slice::from_ref(&report));
    write_file(&a.out, &csv)?;
    print!("{csv}");
    write_run_json(
        &parent_dir(&a.out),
        "eval",
        json!({"model": a.model, "data": a.data, "split": a.split}),
    )
}

fn cmd_report(_ctx: &Ctx, a: &ReportArgs) -> CliResult {
    require_input(&a.unet)?;
    require_input(&a.fd_unet)?;
    let pairs = load_split(&a.data, &a.split)?;
    let detectors = DatasetManifest::read(&a.data)?.spec.detectors;
    let unet = load_model::<f32>(&a.unet)?;
    let fd = load_model::<f32>(&a.fd_unet)?;
    let (ru, out_u) = model_report(&unet, "UNet", detectors, &pairs)?;
    let (rf, out_f) = model_report(&fd, "FD-UNet", detectors, &pairs)?;
    let reports = vec![tr_report(detectors, &pairs)?, ru, rf];
    let csv = reports_to_csv(&reports);
    write_file(&a.out.join("report.csv"), &csv)?;
    for (i, pair) in pairs.iter().take(a.panels).enumerate() {
        let tiles = [&pair.y, &pair.x, &out_u[i], &out_f[i]];
        write_file(&a.out.join("panels").join(format!("panel_{i:02}.pgm")), panel(&tiles))?;
    }
    print!("{csv}");
    write_run_json(
        &a.out,
        "report",
        json!({"data": a.data, "split": a.split, "unet": a.unet, "fd_unet": a.fd_unet, "panels": a.panels}),
    )
}

fn cmd_experiment(ctx: &Ctx, a: &ExperimentArgs) -> CliResult {
    let name: ExperimentName = a
        .name
        .parse()
        .map_err(|e: sparsepat::Error| CliError::Usage(e.to_string()))?;
    let scale: Scale = a
        .scale
        .parse()
        .map_err(|e: sparsepat::Error| CliError::Usage(e.to_string()))?;
    let mut cfg = ctx.file.overlay("experiment", ExperimentConfig::for_scale(scale))?;
    cfg.jobs = ctx.jobs;
    let outcome = run_experiment(name, &cfg, ctx.seed, &a.out)?;
    write_run_json(
        &a.out,
        "experiment",
        json!({"name": name, "scale": scale, "seed": ctx.seed, "config": cfg}),
    )?;
    print!("{}", reports_to_csv(&outcome.reports));
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let file = FileConfig::load(cli.config.as_deref())?;
    let seed = file.pick(cli.seed, "seed", 0)?;
    let jobs = file.pick(cli.jobs, "jobs", 1)?.max(1);
    let ctx = Ctx { file, seed, jobs };
    match &cli.command {
        Command::Phantom(a) => cmd_phantom(&ctx, a),
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::Reconstruct(a) => cmd_reconstruct(&ctx, a),
        Command::MakeDataset(a) => cmd_make_dataset(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::FineTune(a) => cmd_fine_tune(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Report(a) => cmd_report(&ctx, a),
        Command::Experiment(a) => cmd_experiment(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
