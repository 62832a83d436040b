mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use splatground_core::config::{BackendKind, Config};
use splatground_core::Error;

#[derive(Parser, Debug)]
#[command(name = "splatground", version, about = "Ground text queries to 3D object masks in Gaussian-splat scenes")]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Base directory for run directories.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene with supervision and a benchmark manifest.
    GenSynthetic(GenArgs),
    /// Train the instance feature field and classifier.
    BuildField(BuildArgs),
    /// Ground one query to a 3D mask.
    Ground(GroundArgs),
    /// Remove or recolor the Gaussians selected by a 3D mask.
    Edit(EditArgs),
    /// Run a benchmark manifest.
    Eval(EvalArgs),
    /// Render one camera to PNG.
    Render(RenderArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 5)]
    objects: usize,
    #[arg(long, default_value_t = 200)]
    gaussians_per_object: usize,
    #[arg(long, default_value_t = 48)]
    cameras: usize,
    #[arg(long, value_enum, default_value_t = LayoutArg::Scattered)]
    layout: LayoutArg,
    #[arg(long, default_value_t = 64)]
    width: u32,
    #[arg(long, default_value_t = 64)]
    height: u32,
    /// Every n-th camera is held out of the supervision (0 keeps all).
    #[arg(long, default_value_t = 6)]
    holdout_every: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LayoutArg {
    Scattered,
    Occluded,
}

#[derive(Args, Debug)]
struct SceneArgs {
    /// Gaussian PLY file.
    #[arg(long)]
    scene: PathBuf,
    /// Camera JSON file.
    #[arg(long)]
    cameras: PathBuf,
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Supervision manifest (`manifest.json` next to the id-map PNGs).
    #[arg(long)]
    supervision: PathBuf,
    /// Training steps; overrides the config.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
struct GroundArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long)]
    classifier: PathBuf,
    #[arg(long)]
    query: String,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Benchmark manifest holding the oracle's id maps and query table.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Keep the voted coarse mask.
    #[arg(long)]
    skip_refine: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendArg {
    Oracle,
    BboxFill,
    Remote,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Oracle => BackendKind::Oracle,
            BackendArg::BboxFill => BackendKind::BboxFill,
            BackendArg::Remote => BackendKind::Remote,
        }
    }
}

#[derive(Args, Debug)]
struct EditArgs {
    /// Gaussian PLY file.
    #[arg(long)]
    scene: PathBuf,
    /// 3D mask file written by `ground`.
    #[arg(long)]
    mask: PathBuf,
    #[arg(value_enum)]
    kind: EditKind,
    /// Row-major 3x3 color matrix followed by a 3-vector offset.
    #[arg(long, num_args = 12, allow_negative_numbers = true)]
    recolor: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EditKind {
    Remove,
    Recolor,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Field-bearing PLY; overrides the manifest.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    cameras: Option<PathBuf>,
    #[arg(long)]
    classifier: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Boundary band in pixels; 2% of the image diagonal when omitted.
    #[arg(long)]
    band: Option<usize>,
    #[arg(long)]
    parallel: bool,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long)]
    camera: u32,
    #[arg(long, value_enum, default_value_t = RenderWhat::Rgb)]
    what: RenderWhat,
    /// Needed for `idmap`.
    #[arg(long)]
    classifier: Option<PathBuf>,
    /// Needed for `softmask`.
    #[arg(long)]
    mask: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum RenderWhat {
    Rgb,
    Idmap,
    Softmask,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric { .. } => 3,
        Error::GroundingFailed(_) => 4,
        Error::Backend { .. } => 5,
        Error::Internal(_) => 1,
        _ => 2,
    }
}

fn load_config(cli: &Cli) -> splatground_core::Result<Config> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = load_config(&cli).and_then(|config| match &cli.command {
        Command::GenSynthetic(a) => commands::gen_synthetic(&config, a),
        Command::BuildField(a) => commands::build_field(&config, a),
        Command::Ground(a) => commands::ground(&config, a),
        Command::Edit(a) => commands::edit(&config, a),
        Command::Eval(a) => commands::eval(&config, a),
        Command::Render(a) => commands::render(&config, a),
    });
    match result {
        Ok(dir) => {
            println!("run: {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
