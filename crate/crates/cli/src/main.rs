mod commands;
mod meta;

use std::path::PathBuf;
use std::process::ExitCode;

use bipath_core::flow::FlowMode;
use bipath_core::model::AttentionPlacement;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "bipath", version, about = "Flow-based bi-path crowd counting")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate and cache optical flow for sequences.
    Flow(FlowArgs),
    /// Render synthetic sequences with exact dots and flow.
    GenSynthetic(GenArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Score a checkpoint on annotated sequences.
    Eval(EvalArgs),
    /// Write density maps and counts for one sequence.
    Predict(PredictArgs),
    /// Train and compare the flow, gamma and scale ablation grid.
    Ablate(AblateArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FlowType {
    Dis,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Encode {
    Polar,
    Cartesian,
}

impl From<Encode> for FlowMode {
    fn from(e: Encode) -> Self {
        match e {
            Encode::Polar => FlowMode::Polar,
            Encode::Cartesian => FlowMode::Cartesian,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Attention {
    Fused,
    #[value(name = "per_stream")]
    PerStream,
}

impl From<Attention> for AttentionPlacement {
    fn from(a: Attention) -> Self {
        match a {
            Attention::Fused => AttentionPlacement::Fused,
            Attention::PerStream => AttentionPlacement::PerStream,
        }
    }
}

#[derive(Args, Debug)]
struct FlowArgs {
    /// Sequence directory (repeatable).
    #[arg(long = "seq", required = true)]
    seqs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "dis")]
    flow_type: FlowType,
    #[arg(long, value_enum, default_value = "polar")]
    encode: Encode,
    /// Magnitude threshold in px.
    #[arg(long)]
    tau: Option<f32>,
    /// Run configuration supplying DIS parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Recompute cached flow even when up to date.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    /// Scene specification (`key = value`).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0.0)]
    night_fraction: f64,
    /// Overrides the spec seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
struct ModelOverrides {
    /// Run configuration (`key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    no_flow: bool,
    #[arg(long)]
    no_gamma: bool,
    /// `LO,HI` or `none`.
    #[arg(long)]
    scale_range: Option<String>,
    #[arg(long, value_enum)]
    attention: Option<Attention>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` config overrides (repeatable).
    #[arg(long = "set")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Sequence directories, or directories of sequences.
    #[arg(long = "data", required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Explicit validation sequences; otherwise the last `--val-sequences` are held out.
    #[arg(long = "val", num_args = 1..)]
    val: Vec<PathBuf>,
    #[arg(long)]
    val_sequences: Option<usize>,
    #[command(flatten)]
    model: ModelOverrides,
    /// Best checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Metrics CSV (default `<out>.metrics.csv`).
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "data", required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    #[arg(long)]
    ckpt_night: Option<PathBuf>,
    /// Mean-luminance cutoff for night routing.
    #[arg(long)]
    night_threshold: Option<f64>,
    /// Per-frame CSV (default `<ckpt>.eval.csv`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    seq: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long = "data", required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    #[arg(long)]
    val_sequences: Option<usize>,
    #[command(flatten)]
    model: ModelOverrides,
    /// Comparison table path.
    #[arg(long)]
    out: PathBuf,
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
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Flow(a) => commands::flow(a),
        Command::GenSynthetic(a) => commands::gen_synthetic(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
