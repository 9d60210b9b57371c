//! `voclip` command line front end.
//!
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 when a
//! verification (gradient check, loss cross-check) fails. Output lines are
//! `key=value` and carry no timestamps, so repeated runs with the same
//! `--seed` are byte-identical.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use voclip::eval::AlignmentMode;
use voclip::io::Shape;

#[derive(Parser, Debug)]
#[command(
    name = "voclip",
    version,
    about = "Visual-odometry clip training, verification and evaluation"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "VOCLIP_THREADS")]
    pub threads: Option<usize>,
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Consistency-loss weight; overrides the config.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Trajectory alignment before metrics.
    #[arg(long, global = true, value_enum)]
    pub align: Option<AlignArg>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AlignArg {
    None,
    #[value(name = "6dof")]
    Rigid6Dof,
    #[value(name = "7dof")]
    Similarity7Dof,
}

impl From<AlignArg> for AlignmentMode {
    fn from(a: AlignArg) -> Self {
        match a {
            AlignArg::None => AlignmentMode::None,
            AlignArg::Rigid6Dof => AlignmentMode::Rigid6Dof,
            AlignArg::Similarity7Dof => AlignmentMode::Similarity7Dof,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ShapeArg {
    Line,
    Circle,
    FigureEight,
}

impl From<ShapeArg> for Shape {
    fn from(s: ShapeArg) -> Self {
        match s {
            ShapeArg::Line => Shape::Line,
            ShapeArg::Circle => Shape::Circle,
            ShapeArg::FigureEight => Shape::FigureEight,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic ground-truth trajectory and a noisy copy
    /// (`--out` directory: gt.txt, noisy.txt).
    Synth(SynthArgs),
    /// List the clip pairs of a sequence (`--out` file: CSV).
    Sample(SampleArgs),
    /// Loss breakdown of prediction and target files, with a cross-check of
    /// the consistency term against brute-force enumeration.
    Losscheck(LosscheckArgs),
    /// Run the gradient-check suite.
    Gradcheck(GradcheckArgs),
    /// Seeded toy training run (`--out` directory: log, checkpoint, reports).
    TrainToy(TrainArgs),
    /// Evaluate a predicted trajectory (`--out` directory: report.txt,
    /// report.json, report.csv).
    Evaluate(PairArgs),
    /// Align a prediction to ground truth (`--out` file: aligned poses).
    Align(PairArgs),
    /// Convert a pose file or report to CSV (`--out` file).
    Export(ExportArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "line")]
    pub shape: ShapeArg,
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    /// Arc length per frame (m).
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
    /// Inverse turning radius (1/m).
    #[arg(long, default_value_t = 0.05)]
    pub curvature: f64,
    /// Std of the per-motion noise of the noisy copy.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// Number of frames in the sequence.
    #[arg(long)]
    pub length: usize,
    /// Frames per clip.
    #[arg(long = "n-frames", default_value_t = 3)]
    pub n_frames: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Pairs per batch.
    #[arg(long = "batch-size", default_value_t = 2)]
    pub batch_size: usize,
}

#[derive(Args, Debug)]
pub struct LosscheckArgs {
    /// Predictions: one clip per line; lines 2i and 2i+1 form a pair.
    #[arg(long)]
    pub pred: PathBuf,
    /// Targets in the same layout.
    #[arg(long)]
    pub target: PathBuf,
    /// Batch reduction of the consistency term.
    #[arg(long, default_value = "mean")]
    pub reduction: String,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Random instances of the loss-gradient check.
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    /// Parameter coordinates probed per tensor end to end.
    #[arg(long = "coords-per-param", default_value_t = 2)]
    pub coords_per_param: usize,
    #[arg(long = "inject-fault", hide = true)]
    pub inject_fault: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Overrides `train.steps`.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Overrides `optim.lr`.
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Args, Debug)]
pub struct PairArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// KITTI pose file to export as frame,x,y,z.
    #[arg(long, conflicts_with = "report", required_unless_present = "report")]
    pub trajectory: Option<PathBuf>,
    /// Report text file to export as metric,value.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.global.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::dispatch(&cli) {
        Ok(commands::Outcome::Success) => ExitCode::SUCCESS,
        Ok(commands::Outcome::VerificationFailed(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
