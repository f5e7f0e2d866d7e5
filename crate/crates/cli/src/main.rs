//! `ngo`: data generation, two-stage training, evaluation and plotting for
//! the maze odometry models.

mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ngo_core::Error;

#[derive(Parser)]
#[command(name = "ngo", version, about = "Learned odometry and neural graph optimization in 2D mazes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a trajectory dataset file.
    GenData(GenDataArgs),
    /// Pretrain the local pose net.
    TrainLocal(TrainLocalArgs),
    /// Train aggregation and the graph optimizer on a frozen local net.
    TrainGlobal(TrainGlobalArgs),
    /// Evaluate local-only and optimized estimates and write CSV reports.
    Eval(EvalArgs),
    /// Render a series or trajectory-overlay CSV as SVG.
    Plot(PlotArgs),
    /// Run the finite-difference gradient suites.
    GradCheck(GradCheckArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Seen,
    Unseen,
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 39)]
    pub n_traj: usize,
    /// Frames per trajectory.
    #[arg(long, default_value_t = 257)]
    pub traj_len: usize,
    #[arg(long)]
    pub maze_min: Option<usize>,
    #[arg(long)]
    pub maze_max: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, value_enum, default_value_t = SplitArg::Seen)]
    pub split: SplitArg,
    #[arg(long)]
    pub deterministic: bool,
    /// `key=value` file with simulator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Flags shared by both training commands. Flags override `--config`,
/// which overrides the stage defaults.
#[derive(Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Any config key, e.g. `--set lambda_rot=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub items_per_epoch: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub maze_min: Option<usize>,
    #[arg(long)]
    pub maze_max: Option<usize>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Metric log path (default: checkpoint path with `.metrics.csv`).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Frozen seen-split test set; generated from the fixed test seed when absent.
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    /// Size of the generated test set.
    #[arg(long, default_value_t = 39)]
    pub test_size: usize,
}

#[derive(Args)]
pub struct TrainLocalArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Args)]
pub struct TrainGlobalArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub local_ckpt: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Optimizer iterations M.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Steps per training trajectory (T0).
    #[arg(long)]
    pub traj_len: Option<usize>,
    #[arg(long)]
    pub n_halvings: Option<usize>,
    #[arg(long)]
    pub attention: Option<String>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub local_ckpt: PathBuf,
    /// Global checkpoint as `[LABEL=]PATH`. Repeatable.
    #[arg(long)]
    pub global_ckpt: Vec<String>,
    /// Dataset as `[SPLIT=]PATH`; the split name defaults to the file stem. Repeatable.
    #[arg(long, required = true)]
    pub data: Vec<String>,
    /// Iterations for every global model (default: the count it was trained with).
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Trajectories per split whose attention matrices are written.
    #[arg(long, default_value_t = 1)]
    pub attention_trajs: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotMode {
    Auto,
    Series,
    Overlay,
}

#[derive(Args)]
pub struct PlotArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = PlotMode::Auto)]
    pub mode: PlotMode,
    #[arg(long)]
    pub title: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradModule {
    Tensor,
    Nets,
}

#[derive(Args)]
pub struct GradCheckArgs {
    #[arg(long, value_enum)]
    pub module: GradModule,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Adds a fixture with a deliberately wrong backward pass.
    #[arg(long, hide = true)]
    pub inject_broken: bool,
}

/// Failures split into the two nonzero exit codes.
pub enum Failure {
    /// Bad flags, config values or inputs: exit 1.
    Usage(String),
    /// Everything else: exit 2.
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { key, reason } => Failure::Usage(format!("invalid --{}: {reason}", key.replace('_', "-"))),
            e => Failure::Runtime(e.to_string()),
        }
    }
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
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::TrainLocal(a) => commands::train_local(a),
        Command::TrainGlobal(a) => commands::train_global(a),
        Command::Eval(a) => commands::eval(a),
        Command::Plot(a) => plot::run(a),
        Command::GradCheck(a) => commands::grad_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
