use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use facemap_core::maskloss::WeightRatio;

#[derive(Debug, Parser)]
#[command(name = "facemap", version, about = "UV position maps for 3D face reconstruction and dense alignment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Flatten a disk-topology OBJ mesh into the unit square (writes `vt` lines).
    Param(ParamArgs),
    /// Rasterize a uv-mapped mesh into a position map (.uvpm).
    Bake(BakeArgs),
    /// Read the valid pixels of a position map back as an OBJ point cloud.
    Unbake(UnbakeArgs),
    /// Turn a region segmentation into a grayscale weight-mask PNG.
    Mask(MaskArgs),
    /// Generate a synthetic face dataset.
    Gen(GenArgs),
    /// Write randomly augmented copies of a dataset.
    Augment(AugmentArgs),
    /// Train the position-map regression network.
    Train(TrainArgs),
    /// Run a trained network over a dataset.
    Predict(PredictArgs),
    /// Compare predicted and ground-truth position maps.
    Eval(EvalArgs),
    /// Plot cumulative error distributions of one or more eval reports.
    CedPlot(CedPlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightScheme {
    Conformal,
    Uniform,
    MeanValue,
}

#[derive(Debug, Args)]
pub struct ParamArgs {
    pub mesh: PathBuf,
    #[arg(long, value_enum, default_value = "conformal")]
    pub weights: WeightScheme,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct BakeArgs {
    /// OBJ mesh with `vt` coordinates.
    pub mesh: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct UnbakeArgs {
    pub posmap: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
}

fn parse_ratio(s: &str) -> Result<WeightRatio, String> {
    s.parse().map_err(|e: facemap_core::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// Region-code PNG (0 background, 1 face, 2 eye/nose/mouth, 3 neck, 4 landmark).
    pub segmentation: PathBuf,
    /// Landmark : eye-nose-mouth : face : neck.
    #[arg(long, default_value = "16:4:3:0", value_parser = parse_ratio)]
    pub ratio: WeightRatio,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Image and position-map size; a multiple of 32.
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,
    /// Template grid vertices per side (odd).
    #[arg(long, default_value_t = 65)]
    pub grid: usize,
    /// Yaw is drawn from `[-yaw_max, yaw_max]` degrees.
    #[arg(long, default_value_t = 60.0)]
    pub yaw_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write `train.csv` and `val.csv` with this validation share.
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "index.csv")]
    pub index: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Augmented copies per input sample.
    #[arg(long, default_value_t = 1)]
    pub copies: usize,
    #[arg(long)]
    pub occlusion: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    Squared,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReductionArg {
    Sum,
    Mean,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "index.csv")]
    pub index: String,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss curve CSV; defaults to the checkpoint path with a `.loss.csv` suffix.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Continue from this checkpoint instead of a fresh network.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub base: usize,
    #[arg(long, default_value_t = 512)]
    pub bottleneck: usize,
    #[arg(long, default_value = "16:4:3:0", value_parser = parse_ratio)]
    pub ratio: WeightRatio,
    #[arg(long, value_enum, default_value = "squared")]
    pub norm: NormArg,
    #[arg(long, value_enum, default_value = "sum")]
    pub reduction: ReductionArg,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Epochs between learning-rate halvings.
    #[arg(long, default_value_t = 5)]
    pub halving_period: usize,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub augment: bool,
    #[arg(long, requires = "augment")]
    pub occlusion: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "index.csv")]
    pub index: String,
    /// Receives `posmaps/<id>.uvpm` for every sample.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    /// 68-landmark NME.
    Landmarks,
    /// NME over every valid ground-truth pixel.
    Dense,
    /// ICP-aligned reconstruction error normalized by the outer interocular distance.
    Recon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DimsArg {
    Xy,
    Xyz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BoxNormArg {
    /// `sqrt(w * h)`.
    GeometricMean,
    /// `max(w, h)`.
    MaxSide,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReconArg {
    MeanDistance,
    MeanSquared,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory holding `posmaps/<id>.uvpm` predictions.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth dataset.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value = "index.csv")]
    pub index: String,
    #[arg(long, value_enum, default_value = "landmarks")]
    pub mode: EvalMode,
    #[arg(long, value_enum, default_value = "xy")]
    pub dims: DimsArg,
    #[arg(long, value_enum, default_value = "geometric-mean")]
    pub box_norm: BoxNormArg,
    #[arg(long, value_enum, default_value = "mean-distance")]
    pub recon: ReconArg,
    /// Also estimate a uniform scale inside ICP.
    #[arg(long)]
    pub icp_scale: bool,
    #[arg(long, default_value_t = 100)]
    pub icp_iters: usize,
    /// CED range in percent.
    #[arg(long, default_value_t = 10.0)]
    pub cutoff: f64,
    /// Output prefix; writes `<out>.csv` and `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CedPlotArgs {
    /// Per-sample CSV reports written by `eval`.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Legend entries, one per report (defaults to file stems).
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    #[arg(long, default_value_t = 10.0)]
    pub cutoff: f64,
    /// SVG path; the curve CSV goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}
