//! `fsdet`: synthesize data, train heads, run hierarchical inference,
//! evaluate and compare optimizers.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fsdet::Error;

#[derive(Debug, Parser)]
#[command(name = "fsdet", version, about = "Few-shot detection heads with Newton-CG training and hierarchical routing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic train/test dataset pair.
    Synth(SynthArgs),
    /// Train one predictor head per hierarchy group (or one flat head).
    Train(TrainArgs),
    /// Run two-stage hierarchical inference and write detections.
    Infer(InferArgs),
    /// Compute AP, AP50, AP75 and split means for one or more detection files.
    Eval(EvalArgs),
    /// Compare training curves at a target loss.
    Compare(CompareArgs),
    /// Derive a hierarchy from how the base predictor labels novel objects.
    Assign(AssignArgs),
    /// Tabulate how the base predictor labels each novel category.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Acceptance,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Start from a named preset; other flags override it.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// JSON file with a full generator configuration.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub categories: Option<usize>,
    #[arg(long)]
    pub base: Option<usize>,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long)]
    pub test_shots: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Distance between cluster means, in multiples of sigma.
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub proposals_per_object: Option<usize>,
    #[arg(long)]
    pub background_proposals: Option<usize>,
    #[arg(long)]
    pub base_outputs: bool,
    /// Comma-separated parent per novel category: a base index or `bg`.
    #[arg(long)]
    pub novel_parents: Option<String>,
    #[arg(long)]
    pub planted_frequency: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegLoss {
    L2,
    SmoothL1,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Without a hierarchy a single head is trained over every dataset category.
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "newton")]
    pub optimizer: String,
    #[arg(long, default_value_t = 30)]
    pub iters: usize,
    #[arg(long, default_value_t = 2)]
    pub ncg: usize,
    /// Damping; defaults to 0 for newton and 0.5 for newton-mb.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub aug_copies: usize,
    #[arg(long, default_value_t = 0.1)]
    pub aug_noise: f64,
    #[arg(long, default_value_t = 0.5)]
    pub aug_dropout: f64,
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long, value_enum, default_value = "l2")]
    pub reg_loss: RegLoss,
    #[arg(long, default_value_t = 1.0)]
    pub smooth_l1_beta: f64,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_images: usize,
    /// Record the SGD loss every this many iterations.
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub init_std: f64,
    /// Base head whose matching rows warm-start each group head.
    #[arg(long)]
    pub base_head: Option<PathBuf>,
    /// Keep this many images per category (few-shot resampling).
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PostArgs {
    #[arg(long, default_value_t = 0.05)]
    pub score_thresh: f64,
    #[arg(long, default_value_t = 0.5)]
    pub nms_iou: f64,
    #[arg(long, default_value_t = 100)]
    pub topk: usize,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Without a hierarchy the flat head `head_all.fshw` scores every proposal.
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    /// Directory holding `head_<group>.fshw` files.
    #[arg(long)]
    pub heads: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub post: PostArgs,
    #[arg(long)]
    pub route_consumed: bool,
    #[arg(long)]
    pub emit_parent: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Detection files; several files are treated as repeats.
    #[arg(long, num_args = 1.., required = true)]
    pub dets: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Adds one split per base category with children.
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    /// Extra split as `name=cat1,cat2`.
    #[arg(long = "split")]
    pub splits: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Curve as `name=path.csv`; at least two.
    #[arg(long = "curve", num_args = 1.., required = true)]
    pub curves: Vec<String>,
    #[arg(long, conflicts_with = "target_final")]
    pub target: Option<f64>,
    /// Use the final loss of the named curve, times `--target-factor`.
    #[arg(long)]
    pub target_final: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    pub target_factor: f64,
    /// Report JSON; the merged curve CSV goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Base categories that get their own column; defaults to those with
    /// children in this hierarchy, or every base category.
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) | Error::Unsupported(_) | Error::Io(_) => 2,
        Error::Validation(_) | Error::Format { .. } | Error::Json(_) => 3,
        Error::Numerical(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Compare(a) => commands::compare(a),
        Command::Assign(a) => commands::assign(a),
        Command::Analyze(a) => commands::analyze(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
