use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use facewarp_core::mmfit::{ConfidenceMode, Descent};
use facewarp_core::morph::WeightMode;

use crate::formats::png::BitDepth;

#[derive(Debug, Parser)]
#[command(
    name = "facewarp",
    version,
    about = "Landmark-driven face warping, morphing and fitting"
)]
pub struct Cli {
    /// TOML file with parameter defaults; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Warp a face into (or out of) the mean-shape texture frame.
    Warp(WarpArgs),
    /// Generate morphed faces from a dataset directory.
    Augment(AugmentArgs),
    /// Match a photo's face color to a normalized reference face.
    Adjust(AdjustArgs),
    /// Fit morphable-model shape and pose to 2-D landmarks.
    Fit3d(Fit3dArgs),
    /// Average several faces in the mean-shape frame.
    Average(AverageArgs),
    /// Gradient-domain blend of a foreground onto a background.
    Composite(CompositeArgs),
    /// Write the dense flow field that maps a face to the mean shape.
    Flow(FlowArgs),
    /// Find landmark vertices of a morphable model by jittered-view voting.
    Correspond(CorrespondArgs),
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Direction {
    /// Image with its own landmarks → texture in the mean shape.
    ToMean,
    /// Texture in the mean shape → image with the given landmarks.
    FromMean,
}

#[derive(Debug, Args)]
pub struct WarpArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Landmarks of the face in `--image` (to-mean) or of the output face (from-mean).
    #[arg(long)]
    pub landmarks: PathBuf,
    /// Mean-shape landmarks; their width and height define the texture frame.
    #[arg(long)]
    pub mean: PathBuf,
    #[arg(long, value_enum, default_value = "to-mean")]
    pub direction: Direction,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "8")]
    pub bit_depth: BitDepth,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Directory of `NAME.png` images with `NAME.json` landmark files.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub count: usize,
    /// Random seed; the same seed reproduces the same outputs.
    #[arg(long)]
    pub seed: u64,
    /// Neighbour pool size.
    #[arg(long)]
    pub k: Option<usize>,
    /// Landmark weight of the face distance.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_enum)]
    pub weight_mode: Option<WeightModeArg>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "8")]
    pub bit_depth: BitDepth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightModeArg {
    Independent,
    Shared,
}

impl From<WeightModeArg> for WeightMode {
    fn from(m: WeightModeArg) -> Self {
        match m {
            WeightModeArg::Independent => WeightMode::Independent,
            WeightModeArg::Shared => WeightMode::Shared,
        }
    }
}

#[derive(Debug, Args)]
pub struct AdjustArgs {
    #[arg(long)]
    pub photo: PathBuf,
    /// Reference face whose crop mean color the photo should take on.
    #[arg(long)]
    pub normalized: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "8")]
    pub bit_depth: BitDepth,
}

#[derive(Debug, Args)]
pub struct Fit3dArgs {
    /// Detected landmarks in pixels; the file's width and height set the viewport.
    #[arg(long)]
    pub landmarks: PathBuf,
    /// Morphable model in MMB1 format.
    #[arg(long)]
    pub model: PathBuf,
    /// Shape regularization weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_enum)]
    pub descent: Option<DescentArg>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Photo to sample vertex colors from; enables the texture fit.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub confidence: Option<ConfidenceArg>,
    /// JSON result: shape coefficients, pose, loss and optional vertex colors.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DescentArg {
    Gradient,
    DiagonalScaled,
    GaussNewton,
}

impl From<DescentArg> for Descent {
    fn from(d: DescentArg) -> Self {
        match d {
            DescentArg::Gradient => Descent::Gradient,
            DescentArg::DiagonalScaled => Descent::DiagonalScaled,
            DescentArg::GaussNewton => Descent::GaussNewton,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConfidenceArg {
    AsWritten,
    FacingCamera,
}

impl From<ConfidenceArg> for ConfidenceMode {
    fn from(c: ConfidenceArg) -> Self {
        match c {
            ConfidenceArg::AsWritten => ConfidenceMode::AsWritten,
            ConfidenceArg::FacingCamera => ConfidenceMode::FacingCamera,
        }
    }
}

#[derive(Debug, Args)]
pub struct AverageArgs {
    /// Face images, all the same size.
    #[arg(long, num_args = 1.., required = true)]
    pub images: Vec<PathBuf>,
    /// Landmark files, one per image, in the same order.
    #[arg(long, num_args = 1.., required = true)]
    pub landmarks: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the mean landmarks here.
    #[arg(long)]
    pub landmarks_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "8")]
    pub bit_depth: BitDepth,
}

#[derive(Debug, Args)]
pub struct CompositeArgs {
    #[arg(long)]
    pub foreground: PathBuf,
    #[arg(long)]
    pub background: PathBuf,
    /// Grayscale mask image; white keeps the foreground.
    #[arg(long, conflicts_with = "landmarks", required_unless_present = "landmarks")]
    pub mask: Option<PathBuf>,
    /// Build the mask from the convex hull of these landmarks instead.
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    #[arg(long)]
    pub blur_sigma: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "8")]
    pub bit_depth: BitDepth,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    #[arg(long)]
    pub landmarks: PathBuf,
    #[arg(long)]
    pub mean: PathBuf,
    #[arg(long, value_enum, default_value = "to-mean")]
    pub direction: Direction,
    /// Flow field in FLW1 format.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorrespondArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Output size of the renderer the detections come from.
    #[arg(long, default_value_t = 224)]
    pub width: usize,
    #[arg(long, default_value_t = 224)]
    pub height: usize,
    /// Write the jittered cameras as JSON and stop; render and detect with them,
    /// then rerun with `--detections`.
    #[arg(long, conflicts_with = "detections", required_unless_present = "detections")]
    pub emit_cameras: Option<PathBuf>,
    /// Directory with `jitter-000.json`, `jitter-001.json`, … landmark files.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Landmark vertex indices as JSON.
    #[arg(long, required_unless_present = "emit_cameras")]
    pub out: Option<PathBuf>,
    /// Also write a copy of the model with these landmark vertices.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    #[arg(long)]
    pub jitter_count: Option<usize>,
    #[arg(long)]
    pub jitter_degrees: Option<f64>,
}
