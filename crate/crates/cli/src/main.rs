//! `polarlt`: simulate, capture, reconstruct and analyze polarimetric light transport.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable overriding the worker thread count.
const THREADS_ENV: &str = "POLARLT_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "polarlt",
    version,
    about = "Polarimetric light-transport toolchain"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a scene file into a transport tensor.
    Simulate(SimulateArgs),
    /// Simulate ellipsometric captures of a tensor.
    Capture(CaptureArgs),
    /// Recover Mueller blocks from captured intensities.
    Reconstruct(ReconstructArgs),
    /// Optimize capture angles on a synthetic ensemble.
    LearnAngles(LearnArgs),
    /// Lu-Chipman scalar maps of a tensor.
    Decompose(DecomposeArgs),
    /// Principal components of arctangent-mapped Mueller samples.
    Pca(PcaArgs),
    /// Fit or apply polarimetric descattering weights.
    Descatter(DescatterArgs),
    /// Evaluate a slice expression and export the images.
    Slice(SliceArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Camera width in pixels; overrides the scene's `[render]` table.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Number of time bins.
    #[arg(long)]
    bins: Option<usize>,
    /// Time bin width in picoseconds.
    #[arg(long)]
    bin_width_ps: Option<f64>,
    /// Recorded in the manifest; rendering itself draws no random numbers.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Sensor {
    Intensity,
    PolarizerArray,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MaskArg {
    Epipolar,
    NonEpipolar,
}

#[derive(Debug, Args)]
struct CaptureArgs {
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `drr` or a schedule TOML written by `learn-angles`.
    #[arg(long, default_value = "drr")]
    schedule: String,
    /// Captures for the `drr` schedule.
    #[arg(long, default_value_t = 36)]
    k: usize,
    #[arg(long, value_enum, default_value_t = Sensor::Intensity)]
    sensor: Sensor,
    /// Standard deviation of additive Gaussian noise per intensity.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Probe a projector-camera tensor through an epipolar or non-epipolar mask.
    #[arg(long, value_enum)]
    mask: Option<MaskArg>,
    /// Beamsplitter ratio on the coaxial path.
    #[arg(long, default_value_t = 0.5)]
    split: f64,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[arg(long)]
    measurements: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to `<out>.diagnostics.csv`.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LearnArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Noise draws per held-out sample in the comparison table.
    #[arg(long, default_value_t = 4)]
    eval_draws: usize,
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Time bin to decompose; all bins are summed when omitted.
    #[arg(long)]
    bin: Option<usize>,
    /// Projector storage slot; all slots are summed when omitted.
    #[arg(long)]
    slot: Option<usize>,
}

#[derive(Debug, Args)]
struct PcaArgs {
    /// Use every block of this tensor as a sample.
    #[arg(long, conflicts_with = "ensemble")]
    tensor: Option<PathBuf>,
    /// Use a synthetic ensemble of this size instead.
    #[arg(long)]
    ensemble: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Arctangent mapping scale.
    #[arg(long, default_value_t = polarlt::analysis::ARCTAN_SCALE)]
    scale: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DescatterArgs {
    #[command(subcommand)]
    action: DescatterAction,
}

#[derive(Debug, Subcommand)]
enum DescatterAction {
    /// Write a synthetic backscatter + object composite with its ground truth.
    Synth(SynthArgs),
    /// Fit per-channel weights and biases.
    Fit(FitArgs),
    /// Apply a fitted model.
    Apply(ApplyArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    width: usize,
    #[arg(long, default_value_t = 16)]
    height: usize,
    #[arg(long, default_value_t = 8)]
    bins: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// One composite tensor per channel.
    #[arg(long, required = true, num_args = 1..)]
    composite: Vec<PathBuf>,
    /// Ground truth per channel: a CSV grid or an object-only tensor.
    #[arg(long, required = true, num_args = 1..)]
    ground_truth: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Fit the intensity-only restricted model.
    #[arg(long)]
    intensity_only: bool,
    #[arg(long, default_value_t = 500)]
    max_iterations: usize,
}

#[derive(Debug, Args)]
struct ApplyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    composite: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Pgm,
    Csv,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Bits {
    #[value(name = "8")]
    Eight,
    #[value(name = "16")]
    Sixteen,
}

#[derive(Debug, Args)]
struct SliceArgs {
    #[arg(long)]
    tensor: PathBuf,
    /// For example `-sum_t T(s,s_e,3,3,t)` or `T(s,s,:,:,t=2)`.
    #[arg(long, allow_hyphen_values = true)]
    expr: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Both)]
    format: Format,
    #[arg(long, value_enum, default_value_t = Bits::Sixteen)]
    bits: Bits,
}

fn configure_threads() -> Result<(), commands::Failure> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            commands::Failure::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got `{value}`"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| commands::Failure::Usage(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| commands::run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
