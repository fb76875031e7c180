use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use neural_velocimetry::image::{DEFAULT_CLAHE_CLIP_LIMIT, DEFAULT_CLAHE_TILES};
use neural_velocimetry::synth::{DEFAULT_DENSITY, DEFAULT_PEAK};
use neural_velocimetry::train::{RunConfig, DEFAULT_DIVERGENCE_FACTOR};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "nvel",
    version,
    about = "Dense displacement fields from particle images with Fourier-feature networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model to an image pair.
    Estimate(EstimateArgs),
    /// Fit consecutive pairs of a frame sequence with warm starts.
    Sequence(SequenceArgs),
    /// Fit independently seeded models to one pair and report their spread.
    Ensemble(EnsembleArgs),
    /// Score a field or model against ground truth.
    Eval(EvalArgs),
    /// Mean, Reynolds stress, TKE and spectra of a stream of fields.
    Stats(StatsArgs),
    /// Render synthetic particle images with known displacements.
    Synth(SynthArgs),
    /// Background subtraction, smoothing and CLAHE.
    Preprocess(PreprocessArgs),
    /// Print the configuration stored in a model file.
    ModelInfo(ModelInfoArgs),
}

/// Model and training settings shared by the training commands. Values
/// resolve as built-in defaults, then `--config`, then individual flags.
#[derive(Clone, Debug, Default, Args)]
pub struct TrainFlags {
    /// `key = value` configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Embedding scale; larger values give smoother fields.
    #[arg(long)]
    pub beta: Option<f32>,
    #[arg(long)]
    pub n_embed: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub layer_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Reduce gradients in a fixed order so reruns are bit-identical.
    #[arg(long)]
    pub deterministic: bool,
    /// Embed coordinates divided by the image size instead of raw pixels.
    #[arg(long)]
    pub normalize_coords: bool,
}

impl TrainFlags {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        if let Some(v) = self.beta {
            cfg.model.beta = v;
        }
        if let Some(v) = self.n_embed {
            cfg.model.n_embed = v;
        }
        if let Some(v) = self.layers {
            cfg.model.n_layers = v;
        }
        if let Some(v) = self.layer_size {
            cfg.model.layer_size = v;
        }
        if let Some(v) = self.lr {
            cfg.train.lr = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.seed {
            cfg.train.seed = v;
        }
        cfg.train.deterministic = self.deterministic;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Args)]
pub struct EstimateArgs {
    pub first: PathBuf,
    pub second: PathBuf,
    /// Output directory.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Also write magnitude and vorticity PGM heatmaps.
    #[arg(long)]
    pub heatmaps: bool,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Clone, Debug, Args)]
pub struct SequenceArgs {
    /// Frames in order, or a single quoted glob such as 'frames/*.pgm'.
    #[arg(required = true)]
    pub frames: Vec<String>,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Configuration file applied on top of the first pair's settings for
    /// every later pair.
    #[arg(long, value_name = "PATH")]
    pub rest_config: Option<PathBuf>,
    /// Epochs for every pair after the first.
    #[arg(long, default_value_t = 20)]
    pub rest_epochs: usize,
    #[arg(long)]
    pub rest_batch_size: Option<usize>,
    #[arg(long)]
    pub heatmaps: bool,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Clone, Debug, Args)]
pub struct EnsembleArgs {
    pub first: PathBuf,
    pub second: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub members: usize,
    /// Members whose final loss exceeds this multiple of the median are
    /// excluded.
    #[arg(long, default_value_t = DEFAULT_DIVERGENCE_FACTOR)]
    pub divergence_factor: f64,
    /// Member `i` uses seed `seed + i * stride`.
    #[arg(long, default_value_t = 1)]
    pub seed_stride: u64,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    /// Every sample of a dense truth field.
    Dense,
    /// Particle positions listed in a CSV file.
    Points,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    /// NVF1 field to score.
    #[arg(long, required_unless_present = "model", conflicts_with = "model")]
    pub field: Option<PathBuf>,
    /// NVM1 model to score.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Dense truth: NVF1 or Middlebury `.flo`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Point truth: CSV with columns x, y, dx, dy.
    #[arg(long)]
    pub points: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = EvalMode::Dense)]
    pub mode: EvalMode,
    /// Write the result as JSON.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct StatsArgs {
    /// NVF1 fields or NVM1 models in time order.
    #[arg(required = true)]
    pub inputs: Vec<String>,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Sampling grid for model inputs, as WIDTHxHEIGHT pixels.
    #[arg(long)]
    pub size: Option<String>,
    /// Seconds between frames; with --magnification converts to velocity.
    #[arg(long)]
    pub frame_interval: Option<f64>,
    /// Length units per pixel.
    #[arg(long)]
    pub magnification: Option<f64>,
    /// Grid sample `IX,IY` whose time series gets a spectrum; repeatable.
    #[arg(long = "point")]
    pub points: Vec<String>,
    /// Sample rate in Hz when no frame interval is given.
    #[arg(long)]
    pub sample_rate: Option<f64>,
    /// Fit the spectral slope over `LO,HI` Hz.
    #[arg(long)]
    pub band: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// One large particle at the centre of a 256x256 image moved by (10, 10).
    SingleParticle,
    /// Random particles that do not move.
    Zero,
}

#[derive(Clone, Debug, Args)]
pub struct SynthArgs {
    /// Flow such as `uniform:3.7,-2.2`, `rotation:128,128,0.02`,
    /// `shear:0.05,128`, `jet:3,128,20`.
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    pub flow: Option<String>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    #[arg(long, default_value_t = 2)]
    pub frames: usize,
    /// Particles per pixel.
    #[arg(long, default_value_t = DEFAULT_DENSITY)]
    pub density: f64,
    /// Particle e^-2 diameter in pixels [default: 3, or 30 for the
    /// single-particle preset].
    #[arg(long)]
    pub diameter: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_PEAK)]
    pub peak: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standard deviation of additive Gaussian noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Write frames as PNG instead of PGM.
    #[arg(long)]
    pub png: bool,
}

#[derive(Clone, Debug, Args)]
pub struct PreprocessArgs {
    #[arg(required = true)]
    pub inputs: Vec<String>,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Subtract the per-pixel minimum over all inputs.
    #[arg(long)]
    pub background: bool,
    /// 3x3 Gaussian smoothing.
    #[arg(long)]
    pub smooth: bool,
    #[arg(long)]
    pub clahe: bool,
    #[arg(long, default_value_t = DEFAULT_CLAHE_TILES)]
    pub tiles: usize,
    #[arg(long, default_value_t = DEFAULT_CLAHE_CLIP_LIMIT)]
    pub clip_limit: f64,
}

#[derive(Clone, Debug, Args)]
pub struct ModelInfoArgs {
    pub model: PathBuf,
    #[arg(long)]
    pub json: bool,
}
