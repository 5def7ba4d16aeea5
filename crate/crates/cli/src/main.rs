use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use gazesynth::augment::{run_augment, AugmentConfig, AugmentMode};
use gazesynth::dataset::{read_labels, read_manifest, write_text};
use gazesynth::fixtures::{integer_pose_grid, write_demo_dataset};
use gazesynth::geometry::Angles;
use gazesynth::pipeline::{run_preview, run_synthesize, write_preview, RunConfig, SCENE_DIR_ENV};
use gazesynth::stats::{run_stats, DEFAULT_BIN_DEG};
use gazesynth::validate::{run_validate, ValidateOptions};
use gazesynth::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NO_OUTPUT: u8 = 4;
const EXIT_VALIDATION: u8 = 5;

#[derive(Parser)]
#[command(name = "gazesynth", version, about = "Gaze-preserving novel-view face synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render labelled novel views of every manifest source.
    Synthesize(SynthArgs),
    /// Pitch/yaw histograms of a labels file.
    Stats(StatsArgs),
    /// Run the built-in property checks on generated fixtures.
    Validate(ValidateArgs),
    /// Background-switch or flip an existing labelled image set.
    Augment(AugmentArgs),
    /// Montage of one source rendered at several head poses.
    Preview(PreviewArgs),
    /// Synthetic fixture data.
    Fixtures {
        #[command(subcommand)]
        command: FixtureCommand,
    },
}

/// Flags override values from `--config`, which override the defaults.
#[derive(Args, Default)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    pose_pool: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, env = SCENE_DIR_ENV)]
    scene_dir: Option<PathBuf>,
    #[arg(long)]
    per_image: Option<usize>,
    #[arg(long)]
    max_pose_norm_deg: Option<f64>,
    #[arg(long, conflicts_with = "no_frontal_filter")]
    frontal_source_max_deg: Option<f64>,
    /// Admit every source regardless of its head pose.
    #[arg(long)]
    no_frontal_filter: bool,
    /// Black:solid-color:scene ratio, e.g. `1:1:3`.
    #[arg(long, value_parser = parse_ratio)]
    bg_ratio: Option<[u32; 3]>,
    #[arg(long)]
    weak_light_fraction: Option<f64>,
    /// Weak ambient range `lo,hi`.
    #[arg(long, value_parser = parse_range)]
    ambient_range: Option<[f64; 2]>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write 224x224 downscaled copies.
    #[arg(long)]
    emit_224: bool,
    #[arg(long)]
    emit_depth: bool,
    #[arg(long)]
    no_landmarks: bool,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    focal_px: Option<f64>,
    #[arg(long)]
    face_distance_mm: Option<f64>,
    #[arg(long)]
    out_size: Option<u32>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_json_file(p)?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => {$( if let Some(v) = self.$f.clone() { c.$f = v; } )*};
        }
        take!(manifest, pose_pool, out_dir, per_image, max_pose_norm_deg, bg_ratio, weak_light_fraction, ambient_range, seed, workers, focal_px, face_distance_mm, out_size);
        if self.scene_dir.is_some() {
            c.scene_dir = self.scene_dir.clone();
        }
        if let Some(v) = self.frontal_source_max_deg {
            c.frontal_source_max_deg = Some(v);
        }
        if self.no_frontal_filter {
            c.frontal_source_max_deg = None;
        }
        c.emit_224 |= self.emit_224;
        c.emit_depth |= self.emit_depth;
        if self.no_landmarks {
            c.emit_landmarks = false;
        }
        c.validate()?;
        Ok(c)
    }
}

fn parse_ratio(s: &str) -> Result<[u32; 3], String> {
    let parts: Vec<u32> = s
        .split(':')
        .map(|p| p.trim().parse().map_err(|_| format!("bad ratio part `{p}`")))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| "expected three parts like 1:1:3".to_string())
}

fn parse_range(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad number `{p}`")))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| "expected `lo,hi`".to_string())
}

#[derive(Clone)]
struct PoseList(Vec<Angles>);

/// `pitch,yaw;pitch,yaw;...` in degrees.
fn parse_poses(s: &str) -> Result<PoseList, String> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| parse_range(p).map(|[a, b]| Angles::from_degrees(a, b)))
        .collect::<Result<_, _>>()
        .map(PoseList)
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BIN_DEG)]
    bin_deg: f64,
    /// Write the histogram CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    fixtures: usize,
    /// Scale the estimated alpha before lifting (fault injection).
    #[arg(long)]
    perturb_alpha: Option<f64>,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Bg,
    Flip,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    labels: PathBuf,
    /// Directory label paths are relative to; defaults to the labels' directory.
    #[arg(long)]
    images_dir: Option<PathBuf>,
    /// Landmarks JSONL; defaults to `landmarks.jsonl` next to the labels.
    #[arg(long)]
    landmarks: Option<PathBuf>,
    #[arg(long, env = SCENE_DIR_ENV)]
    scene_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct PreviewArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Sample to render; defaults to the first manifest entry.
    #[arg(long)]
    sample_id: Option<String>,
    /// Poses as `pitch,yaw;pitch,yaw` in degrees.
    #[arg(long, value_parser = parse_poses, conflicts_with = "grid")]
    poses: Option<PoseList>,
    /// Square n x n pose grid over +-`grid-extent-deg`.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, default_value_t = 30.0)]
    grid_extent_deg: f64,
    #[arg(long)]
    columns: Option<usize>,
    #[arg(long, default_value = "preview.png")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum FixtureCommand {
    /// Write procedural sources, a pose pool and scene images.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 4)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mesh grid level; 3 gives about 5k vertices.
    #[arg(long, default_value_t = 3)]
    subdivision: u32,
    #[arg(long, default_value_t = 6)]
    scenes: usize,
    /// Pose-pool grid spacing in degrees.
    #[arg(long, default_value_t = 10)]
    pose_step_deg: u32,
    #[arg(long, default_value_t = 60.0)]
    pose_max_norm_deg: f64,
}

enum Failure {
    Error(Error),
    NoOutput,
    Validation,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Image { .. } | Error::MissingLandmarks(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn synthesize(args: &SynthArgs) -> Result<(), Failure> {
    let config = args.config.resolve()?;
    let summary = run_synthesize(&config)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
    if summary.images_written == 0 {
        return Err(Failure::NoOutput);
    }
    Ok(())
}

fn stats(args: &StatsArgs) -> Result<(), Failure> {
    let labels = read_labels(&args.labels)?;
    let report = run_stats(&labels, args.bin_deg)?;
    print!("{}", report.to_text());
    if let Some(p) = &args.csv {
        write_text(p, &report.to_csv())?;
        info!("histogram CSV written to {}", p.display());
    }
    Ok(())
}

fn validate(args: &ValidateArgs) -> Result<(), Failure> {
    let report = run_validate(&ValidateOptions {
        seed: args.seed,
        fixtures: args.fixtures,
        alpha_perturbation: args.perturb_alpha,
        ..Default::default()
    })?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    } else {
        print!("{}", report.to_text());
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Validation)
    }
}

fn augment(args: &AugmentArgs) -> Result<(), Failure> {
    let base = args.labels.parent().map(PathBuf::from).unwrap_or_default();
    let mode = match args.mode {
        ModeArg::Bg => AugmentMode::Bg,
        ModeArg::Flip => AugmentMode::Flip,
    };
    let summary = run_augment(&AugmentConfig {
        labels: args.labels.clone(),
        images_dir: args.images_dir.clone().unwrap_or_else(|| base.clone()),
        landmarks: args
            .landmarks
            .clone()
            .or_else(|| Some(base.join(gazesynth::pipeline::LANDMARKS_FILE))),
        scene_dir: args.scene_dir.clone(),
        mode,
        seed: args.seed,
        out_dir: args.out_dir.clone(),
        workers: args.workers,
    })?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
    if summary.written == 0 {
        return Err(Failure::NoOutput);
    }
    Ok(())
}

fn preview(args: &PreviewArgs) -> Result<(), Failure> {
    let config = args.config.resolve()?;
    let entries = read_manifest(&config.manifest)?;
    let entry = match &args.sample_id {
        Some(id) => entries.iter().find(|e| &e.sample_id == id),
        None => entries.first(),
    }
    .ok_or_else(|| Error::Config("no matching manifest entry".into()))?;
    let poses = match (&args.poses, args.grid) {
        (Some(p), _) => p.0.clone(),
        (None, Some(n)) => {
            let n = n.max(1);
            let at = |i: usize| {
                if n == 1 {
                    0.0
                } else {
                    -args.grid_extent_deg + 2.0 * args.grid_extent_deg * i as f64 / (n - 1) as f64
                }
            };
            (0..n * n).map(|k| Angles::from_degrees(-at(k / n), at(k % n))).collect()
        }
        (None, None) => vec![Angles::default()],
    };
    let columns = args.columns.or(args.grid);
    let img = run_preview(entry, &poses, columns, &config)?;
    write_preview(&args.out, &img)?;
    println!("{} ({}x{}, {} views)", args.out.display(), img.width(), img.height(), poses.len());
    Ok(())
}

fn generate(args: &GenerateArgs) -> Result<(), Failure> {
    let poses = integer_pose_grid(args.pose_step_deg, args.pose_max_norm_deg);
    let demo = write_demo_dataset(&args.out_dir, args.count, args.seed, args.subdivision, args.scenes, &poses)?;
    println!("manifest   {}", demo.manifest.display());
    println!("pose pool  {} ({} poses)", demo.pose_pool.display(), poses.len());
    println!("scenes     {}", demo.scene_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synthesize(a) => synthesize(a),
        Command::Stats(a) => stats(a),
        Command::Validate(a) => validate(a),
        Command::Augment(a) => augment(a),
        Command::Preview(a) => preview(a),
        Command::Fixtures {
            command: FixtureCommand::Generate(a),
        } => generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::NoOutput) => {
            eprintln!("error: no images were written");
            ExitCode::from(EXIT_NO_OUTPUT)
        }
        Err(Failure::Validation) => ExitCode::from(EXIT_VALIDATION),
    }
}
