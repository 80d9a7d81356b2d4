//! `faceshape` — generate synthetic landmark data, train the shape priors,
//! correct corrupted measurements, track sequences and evaluate results.
//!
//! Configuration comes from flags or a JSON config file (`--config`); flags
//! override file fields. Every run is driven by one master seed, split
//! deterministically per stage, so identical configurations reproduce
//! identical artifacts byte for byte (timing fields excepted).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    /// A required input file does not exist (exit 2).
    Missing(PathBuf),
    /// Invalid configuration: bad flags, bad config file, bad values
    /// (exit 3).
    Config(String),
    /// Data or numerical failure: schema mismatch, non-PD covariance,
    /// divergence (exit 4).
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Missing(_) => 2,
            CliError::Config(_) => 3,
            CliError::Data(_) => 4,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Missing(p) => write!(f, "missing input file: {}", p.display()),
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Data(m) => write!(f, "{m}"),
        }
    }
}

impl From<faceshape::Error> for CliError {
    fn from(e: faceshape::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "faceshape",
    version,
    about = "RBM face-shape priors: synthetic data, training, correction, tracking"
)]
pub struct Cli {
    /// JSON config file; explicit flags override its fields. May also carry
    /// a "command" field when no subcommand is given.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic corpora: frontal shapes, pose pairs, sequences.
    GenData(GenDataArgs),
    /// Train the frontal two-layer prior on a shape corpus.
    TrainFrontal(TrainFrontalArgs),
    /// Train the pose-transfer prior on a (frontal, posed) pair corpus.
    TrainPose(TrainPoseArgs),
    /// Draw local prior samples around a shape.
    Sample(SampleArgs),
    /// Corrupt shapes, correct them with a prior, report error reduction.
    Correct(CorrectArgs),
    /// Track measurement sequences with per-frame prior fusion.
    Track(TrackArgs),
    /// Evaluate tracked shapes against ground truth.
    Eval(EvalArgs),
}

#[derive(clap::Args, Debug, Default, Clone)]
pub struct GenDataArgs {
    /// Output directory for the generated corpora.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Number of frontal shapes.
    #[arg(long)]
    pub count: Option<usize>,
    /// Pose angles (degrees) for the paired corpus; repeat or separate with
    /// commas.
    #[arg(long = "pose-deg", num_args = 1.., value_delimiter = ',', allow_negative_numbers = true)]
    pub pose_deg: Option<Vec<f64>>,
    /// Number of onset-to-apex sequences.
    #[arg(long)]
    pub sequences: Option<usize>,
    /// Frames per sequence.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Measurement noise std for sequences, interocular units.
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Probability of an outlier landmark per sequence frame.
    #[arg(long)]
    pub outlier_prob: Option<f64>,
    /// Outlier displacement magnitude, interocular units.
    #[arg(long)]
    pub outlier_magnitude: Option<f64>,
    /// Yaw angle of the generated sequences.
    #[arg(long, allow_negative_numbers = true)]
    pub sequence_pose_deg: Option<f64>,
    /// Identity perturbation std.
    #[arg(long)]
    pub identity_noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(clap::Args, Debug, Default, Clone)]
pub struct TrainFrontalArgs {
    /// Shape corpus (JSON Lines).
    #[arg(long)]
    pub shapes: Option<PathBuf>,
    /// Output model path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// First hidden layer size.
    #[arg(long)]
    pub hidden1: Option<usize>,
    /// Second hidden layer size.
    #[arg(long)]
    pub hidden2: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub cd_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(clap::Args, Debug, Default, Clone)]
pub struct TrainPoseArgs {
    /// Pair corpus (JSON Lines).
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Trained frontal model to embed.
    #[arg(long)]
    pub frontal_model: Option<PathBuf>,
    /// Output model path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Hidden gate count K.
    #[arg(long)]
    pub hidden_k: Option<usize>,
    /// Factor count F.
    #[arg(long)]
    pub factors: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub cd_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(clap::Args, Debug, Default, Clone)]
pub struct SampleArgs {
    /// Trained model (frontal or pose).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Corpus holding the initialization shape.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Record index within the corpus.
    #[arg(long)]
    pub index: Option<usize>,
    /// Output corpus of samples.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Samples to draw (D).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Sweeps per sample (S).
    #[arg(long)]
    pub sweeps: Option<usize>,
    /// Chain samples instead of restarting from the initialization.
    #[arg(long)]
    pub chain: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionFlag {
    Gaussian,
    Kde,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptFlag {
    /// Displace one random landmark per shape.
    Outlier,
    /// Gaussian noise on the 13 left-half landmarks.
    Half,
    /// Gaussian noise on every landmark.
    Noise,
}

#[derive(clap::Args, Debug, Default, Clone)]
pub struct CorrectArgs {
    /// Trained model (frontal or pose).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Ground-truth shape corpus to corrupt and correct.
    #[arg(long)]
    pub shapes: Option<PathBuf>,
    /// Corruption model.
    #[arg(long, value_enum)]
    pub corrupt: Option<CorruptFlag>,
    /// Corruption magnitude, interocular units.
    #[arg(long)]
    pub magnitude: Option<f64>,
    #[arg(long, value_enum)]
    pub fusion: Option<FusionFlag>,
    /// Samples to draw (D).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Sweeps per sample (S).
    #[arg(long)]
    pub sweeps: Option<usize>,
    /// Ridge added to the estimated measurement covariance.
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Pairs used to estimate the measurement covariance.
    #[arg(long)]
    pub estimation_count: Option<usize>,
    /// Output directory (corrected corpus, measurements, report, summary).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(clap::Args, Debug, Default, Clone)]
pub struct TrackArgs {
    /// Trained model (frontal or pose).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Sequence corpus (JSON Lines, one frame per record).
    #[arg(long)]
    pub sequences: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub fusion: Option<FusionFlag>,
    /// Samples to draw per frame (D).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Sweeps per sample (S).
    #[arg(long)]
    pub sweeps: Option<usize>,
    /// Ridge added to the estimated measurement covariance.
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Output directory (tracked corpus, report, frame curve, summary).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(clap::Args, Debug, Default, Clone)]
pub struct EvalArgs {
    /// Tracked/corrected shape corpus.
    #[arg(long)]
    pub tracked: Option<PathBuf>,
    /// Ground-truth shape corpus, same length and order.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Optional output directory for the report and summary.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(3)
                }
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
