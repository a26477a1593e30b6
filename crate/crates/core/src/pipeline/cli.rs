//! The `dynloc` command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{ArgAction, Args, Parser, Subcommand};

use super::{preprocess_map, run_localize, BuildStatus, PipelineConfig, PipelineError};
use crate::evalx::{self, DEFAULT_ROT_GATE_DEG, DEFAULT_THRESHOLDS};
use crate::synthgen::{generate_dataset, DatasetConfig, MovableSpec};

#[derive(Debug, Parser)]
#[command(
    name = "dynloc",
    version,
    about = "Localize query images against an RGB-D map, ignoring movable objects"
)]
struct Cli {
    /// File of `key value` lines; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for every stochastic stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More log output on standard error (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic indoor dataset with ground-truth poses.
    GenerateDataset(GenerateArgs),
    /// Fuse the mesh and build the sparse model of a map directory.
    BuildMap(BuildArgs),
    /// Localize every query image and write poses.txt and report.txt.
    Localize(LocalizeArgs),
    /// Accuracy curves of one or more localization runs.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    /// Panoramic sweep positions in the map.
    #[arg(long, default_value_t = 12)]
    sweeps: usize,
    #[arg(long, default_value_t = 15)]
    queries: usize,
    /// Move mapped persons in front of the query cameras and add unmapped objects.
    #[arg(long)]
    dynamic: bool,
    /// Persons standing in the room while it is mapped [default: 3 with --dynamic, else 0].
    #[arg(long)]
    movers: Option<usize>,
    /// Plain room surfaces instead of textured ones.
    #[arg(long)]
    textureless: bool,
    /// Image downscale factor applied to the default camera.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 5)]
    furniture: usize,
    /// Minimum distance between sweep positions.
    #[arg(long, default_value_t = 1.5)]
    min_spacing: f64,
    /// Room extents `x,y,z` (y is the height).
    #[arg(long, value_delimiter = ',', num_args = 3)]
    room: Option<Vec<f64>>,
    /// Range `lo,hi` the per-query occupancy targets are drawn from.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    occupancy: Option<Vec<f64>>,
}

/// Flags mirroring the pipeline configuration keys.
#[derive(Debug, Args)]
struct PipelineFlags {
    #[arg(long, value_name = "K")]
    retrieval_k: Option<String>,
    #[arg(long, value_name = "T")]
    top_t: Option<String>,
    #[arg(long, value_name = "L")]
    render_l: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    /// `density_ratio` or `paper_difference`.
    #[arg(long)]
    combiner: Option<String>,
    #[arg(long)]
    min_track_length: Option<String>,
    /// Coverage penalty weight used by select_only and full.
    #[arg(long)]
    lambda: Option<String>,
    /// `sampson` or `algebraic`.
    #[arg(long)]
    epipolar_residual: Option<String>,
    #[arg(long)]
    epipolar_threshold: Option<String>,
    #[arg(long)]
    ransac_threshold: Option<String>,
    #[arg(long)]
    ransac_iters: Option<String>,
    #[arg(long)]
    ransac_confidence: Option<String>,
    #[arg(long)]
    lo_rounds: Option<String>,
    #[arg(long)]
    patch: Option<String>,
    #[arg(long)]
    stride: Option<String>,
    #[arg(long)]
    max_keypoints: Option<String>,
    #[arg(long)]
    match_ratio: Option<String>,
    #[arg(long)]
    voxel_size: Option<String>,
    #[arg(long)]
    truncation: Option<String>,
    #[arg(long)]
    max_voxels: Option<String>,
    /// File of `class layer` lines.
    #[arg(long, value_name = "FILE")]
    taxonomy: Option<String>,
}

impl PipelineFlags {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("retrieval_k", &self.retrieval_k),
            ("top_t", &self.top_t),
            ("render_l", &self.render_l),
            ("gamma", &self.gamma),
            ("delta", &self.delta),
            ("combiner", &self.combiner),
            ("min_track_length", &self.min_track_length),
            ("lambda", &self.lambda),
            ("epipolar_residual", &self.epipolar_residual),
            ("epipolar_threshold", &self.epipolar_threshold),
            ("ransac_threshold", &self.ransac_threshold),
            ("ransac_iters", &self.ransac_iters),
            ("ransac_confidence", &self.ransac_confidence),
            ("lo_rounds", &self.lo_rounds),
            ("patch", &self.patch),
            ("stride", &self.stride),
            ("max_keypoints", &self.max_keypoints),
            ("match_ratio", &self.match_ratio),
            ("voxel_size", &self.voxel_size),
            ("truncation", &self.truncation),
            ("max_voxels", &self.max_voxels),
            ("taxonomy", &self.taxonomy),
        ]
    }
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[arg(long)]
    map: PathBuf,
    /// Rebuild even when inputs and parameters are unchanged.
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    flags: PipelineFlags,
}

#[derive(Debug, Args)]
struct LocalizeArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `baseline`, `select_only`, `filter_only` or `full`.
    #[arg(long)]
    variant: Option<String>,
    /// Write candidate renders and score tables here.
    #[arg(long, value_name = "DIR")]
    debug_dir: Option<PathBuf>,
    #[command(flatten)]
    flags: PipelineFlags,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Ground-truth pose file.
    #[arg(long)]
    gt: PathBuf,
    /// Localization output to evaluate, as `NAME=DIR` (repeatable; deltas are
    /// taken against the first).
    #[arg(long = "run", value_name = "NAME=DIR", required = true)]
    runs: Vec<String>,
    /// Query mask directory, enabling the high-occupancy subset breakdown.
    #[arg(long, value_name = "DIR")]
    masks: Option<PathBuf>,
    /// Directory for curves.csv, report.txt and curves.dat.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ascending distance thresholds, comma separated.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    /// Rotation gate in degrees.
    #[arg(long, default_value_t = DEFAULT_ROT_GATE_DEG)]
    rot_gate: f64,
}

/// Defaults, then the config file, then command-line flags.
fn pipeline_config(cli: &Cli, flags: Option<&PipelineFlags>, variant: Option<&str>) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &cli.config {
        cfg.load_file(path)?;
    }
    if let Some(flags) = flags {
        for (key, value) in flags.pairs() {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
    }
    if let Some(v) = variant {
        cfg.set("variant", v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.ransac.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    Ok(cfg)
}

fn generate(cli: &Cli, args: &GenerateArgs) -> Result<(), PipelineError> {
    let pcfg = pipeline_config(cli, None, None)?;
    let mut cfg = DatasetConfig::default();
    cfg.scene.seed = pcfg.seed();
    cfg.scene.furniture = args.furniture;
    cfg.scene.textureless = args.textureless;
    if let Some(r) = &args.room {
        cfg.scene.room = [r[0], r[1], r[2]];
    }
    if let Some(o) = &args.occupancy {
        if !(0.0 <= o[0] && o[0] <= o[1] && o[1] < 1.0) {
            return Err(PipelineError::Config(format!("occupancy range {o:?} must satisfy 0 <= lo <= hi < 1")));
        }
        cfg.occupancy_range = [o[0], o[1]];
    }
    if !(args.scale >= 1.0 && args.scale.is_finite()) {
        return Err(PipelineError::Config(format!("--scale must be at least 1, got {}", args.scale)));
    }
    cfg.intrinsics = cfg.intrinsics.downscaled(args.scale);
    cfg.sweeps = args.sweeps;
    cfg.queries = args.queries;
    cfg.dynamic = args.dynamic;
    let movers = args.movers.unwrap_or(if args.dynamic { 3 } else { 0 });
    cfg.scene.movable = vec![MovableSpec::person(); movers];
    cfg.min_spacing = args.min_spacing;
    let summary = generate_dataset(&cfg, &args.out)?;
    log::info!(
        "wrote {} database images and {} queries to {} (mean occupancy {:.3})",
        summary.database_images,
        summary.queries,
        args.out.display(),
        summary.mean_occupancy()
    );
    Ok(())
}

fn build(cli: &Cli, args: &BuildArgs) -> Result<(), PipelineError> {
    let cfg = pipeline_config(cli, Some(&args.flags), None)?;
    let report = preprocess_map(&args.map, &cfg, args.force)?;
    match report.status {
        BuildStatus::UpToDate => log::info!("map is up to date ({})", report.checksum),
        BuildStatus::Built => log::info!(
            "built map: {} images, {} points, {} mesh faces",
            report.images,
            report.points,
            report.mesh_faces
        ),
    }
    Ok(())
}

fn localize_cmd(cli: &Cli, args: &LocalizeArgs) -> Result<(), PipelineError> {
    let cfg = pipeline_config(cli, Some(&args.flags), args.variant.as_deref())?;
    let summary = run_localize(&args.map, &args.queries, &args.out, &cfg, args.debug_dir.as_deref())?;
    log::info!(
        "localized {} of {} queries; results in {}",
        summary.localized(),
        summary.results.len(),
        args.out.display()
    );
    Ok(())
}

fn parse_run(spec: &str) -> Result<(String, PathBuf), PipelineError> {
    match spec.split_once('=') {
        Some((name, dir)) if !name.is_empty() && !dir.is_empty() => Ok((name.to_string(), PathBuf::from(dir))),
        _ => Err(PipelineError::Config(format!("--run expects NAME=DIR, got `{spec}`"))),
    }
}

fn evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<(), PipelineError> {
    pipeline_config(cli, None, None)?;
    let runs: Vec<(String, PathBuf)> = args.runs.iter().map(|r| parse_run(r)).collect::<Result<_, _>>()?;
    let thresholds = args.thresholds.clone().unwrap_or_else(|| DEFAULT_THRESHOLDS.to_vec());
    if let Err(e) = evalx::accuracy_curve(&[], &BTreeMap::new(), &thresholds, args.rot_gate) {
        return Err(PipelineError::Config(e.to_string()));
    }
    let gt = evalx::read_ground_truth(&args.gt)?;
    let results = runs
        .iter()
        .map(|(name, dir)| Ok((name.clone(), evalx::read_results(dir)?)))
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let occupancy = match &args.masks {
        Some(dir) => Some(evalx::occupancy_stats(dir)?.as_map()),
        None => None,
    };
    let cmp = evalx::compare_variants(&results, &gt, occupancy.as_ref(), &thresholds, args.rot_gate)?;
    print!("{}", evalx::report_text(&cmp));
    if let Some(out) = &args.out {
        evalx::write_comparison(out, &cmp)?;
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), PipelineError> {
    match &cli.command {
        Command::GenerateDataset(a) => generate(cli, a),
        Command::BuildMap(a) => build(cli, a),
        Command::Localize(a) => localize_cmd(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 on usage or configuration errors, 2 on data errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    init_logging(cli.verbose);
    let jobs = cli.jobs.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {jobs} worker threads: {e}");
            return 2;
        }
    };
    match pool.install(|| execute(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// `run` over the process arguments.
pub fn main_exit_code() -> i32 {
    run(std::env::args_os())
}
