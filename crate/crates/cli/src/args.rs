use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mvtv::metric_space::MetricSpace;
use mvtv::models::Model;
use mvtv::proximal::JacobianNorm;

#[derive(Debug, Parser)]
#[command(name = "mvtv", version, about = "Total-variation denoising of measure-valued images")]
pub struct Cli {
    /// Worker threads for the solver (default: all logical cores).
    #[arg(long, global = true, env = "MVTV_THREADS")]
    pub threads: Option<usize>,

    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the discretization summary of a space as JSON.
    SpaceInfo(SpaceInfoArgs),
    /// Generate a synthetic phantom and its ground-truth sidecar.
    Phantom(PhantomArgs),
    /// Add Gaussian noise to the densities of an image.
    Noise(NoiseArgs),
    /// Run the W1-TV or L2-TV model on an image.
    Denoise(DenoiseArgs),
    /// Angular error against ground truth and optional W1 error map.
    Eval(EvalArgs),
    /// Per-voxel W1 distances between two images.
    W1(W1Args),
    /// Total variation of an image.
    Tv(TvArgs),
    /// Randomized checks of the product-norm conditions.
    CheckNorms(CheckNormsArgs),
    /// Export figure data as tidy CSV.
    ExportPlot(ExportPlotArgs),
}

/// `icosphere:<level>`, `circle:<l>` or `twopoint[:<distance>]`.
#[derive(Debug, Clone, PartialEq)]
pub enum SpaceArg {
    Icosphere(u32),
    Circle(usize),
    TwoPoint(f64),
}

impl FromStr for SpaceArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, param) = match s.split_once(':') {
            Some((k, p)) => (k, Some(p)),
            None => (s, None),
        };
        let bad = |p: &str| format!("bad parameter `{p}` in space `{s}`");
        match (kind, param) {
            ("icosphere", Some(p)) => p.parse().map(SpaceArg::Icosphere).map_err(|_| bad(p)),
            ("circle", Some(p)) => p.parse().map(SpaceArg::Circle).map_err(|_| bad(p)),
            ("twopoint", None) => Ok(SpaceArg::TwoPoint(1.0)),
            ("twopoint", Some(p)) => p.parse().map(SpaceArg::TwoPoint).map_err(|_| bad(p)),
            _ => Err(format!(
                "unknown space `{s}`; expected icosphere:<level>, circle:<l> or twopoint[:<d>]"
            )),
        }
    }
}

impl SpaceArg {
    pub fn build(&self) -> mvtv::Result<MetricSpace<f64>> {
        match *self {
            SpaceArg::Icosphere(level) => MetricSpace::icosphere(level),
            SpaceArg::Circle(l) => MetricSpace::circle(l),
            SpaceArg::TwoPoint(d) => MetricSpace::two_point(d),
        }
    }
}

#[derive(Debug, Args)]
pub struct SpaceInfoArgs {
    #[arg(long, default_value = "icosphere:2")]
    pub space: SpaceArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PhantomKindArg {
    Rotating,
    Crossing,
    Twopoint,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long, value_enum)]
    pub kind: PhantomKindArg,
    /// Icosphere level for the sphere phantoms.
    #[arg(long, default_value_t = 2)]
    pub level: u32,
    /// Row length (rotating) or interval length (twopoint).
    #[arg(long)]
    pub n: Option<usize>,
    /// Side length of the crossing phantom.
    #[arg(long, default_value_t = mvtv::synth::CROSSING_SIZE)]
    pub size: usize,
    /// Total turn of the rotating row in degrees.
    #[arg(long, default_value_t = 90.0)]
    pub angle_range: f64,
    #[arg(long, default_value_t = mvtv::synth::DEFAULT_KAPPA)]
    pub kappa: f64,
    /// Add noise at this signal-to-noise ratio; noiseless when omitted.
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub snr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub model: Model,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value = "spectral")]
    pub norm: JacobianNorm,
    #[arg(long, default_value_t = 1e-5)]
    pub gap_tol: f64,
    #[arg(long, default_value_t = 200_000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1000)]
    pub check_every: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initial primal step (requires --sigma).
    #[arg(long, requires = "sigma")]
    pub tau: Option<f64>,
    /// Initial dual step (requires --tau).
    #[arg(long, requires = "tau")]
    pub sigma: Option<f64>,
    /// Keep the step sizes fixed.
    #[arg(long)]
    pub fixed_steps: bool,
    /// Per-entry diagonal preconditioning instead of per-block weights.
    #[arg(long)]
    pub diagonal_preconditioning: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Report path (default: the output path with extension `report.json`).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub input: PathBuf,
    /// Ground-truth sidecar.
    #[arg(long)]
    pub gt: PathBuf,
    /// Clean image for the W1 error map.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value_t = mvtv::metrics::DEFAULT_REL_THRESHOLD)]
    pub threshold: f64,
    /// Error in degrees for ground-truth directions without a matching peak.
    #[arg(long, default_value_t = mvtv::metrics::UNMATCHED_PENALTY_DEG)]
    pub unmatched_penalty: f64,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct W1Args {
    pub first: PathBuf,
    pub second: PathBuf,
    /// Per-voxel CSV map.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TvArgs {
    pub input: PathBuf,
    #[arg(long, default_value = "spectral")]
    pub norm: JacobianNorm,
    /// Relative tolerance of the inner solve when it is not exact.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct CheckNormsArgs {
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
pub enum PlotKind {
    OdfProfile,
    DistanceCurve,
    GapTrace,
}

#[derive(Debug, Args)]
pub struct ExportPlotArgs {
    /// `.mvi` images (odf-profile, distance-curve) or reports (gap-trace).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub what: PlotKind,
    #[arg(long)]
    pub out: PathBuf,
}
