//! `mldrnet` — synthesize data, train, evaluate, gradient-check and run
//! ablations.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 failure while
//! running (I/O, non-finite loss, gradient check above threshold).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "mldrnet", version, about = "Multi-level deep representation networks for image emotion classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-level-cue dataset file.
    Synth(SynthArgs),
    /// Train a model; writes a checkpoint and a report to the output directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Compare analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Train one model per variant along an axis and tabulate test accuracy.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 800)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Cue weights "low,mid,high" summing to 1, or "balanced".
    #[arg(long, default_value = "balanced")]
    cue_mix: String,
    #[arg(long, default_value_t = 0.05)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

/// Run configuration: `--config` file first, then flags, then `--set` pairs.
#[derive(Args, Clone, Default)]
struct RunArgs {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    depth: Option<String>,
    #[arg(long)]
    fusion: Option<String>,
    #[arg(long)]
    n_classes: Option<String>,
    #[arg(long)]
    input_size: Option<String>,
    #[arg(long)]
    trunk_channels: Option<String>,
    #[arg(long)]
    branch_hidden: Option<String>,
    #[arg(long)]
    reduce_channels: Option<String>,
    #[arg(long)]
    dropout_rate: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    lr_policy: Option<String>,
    #[arg(long)]
    lr_factor: Option<String>,
    #[arg(long)]
    lr_every: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    train_data: Option<String>,
    #[arg(long)]
    val_data: Option<String>,
    #[arg(long)]
    test_data: Option<String>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    noise_rate: Option<String>,
    /// Evaluate with five-crop probability averaging.
    #[arg(long)]
    crops: bool,
    #[arg(long)]
    out_dir: Option<String>,
    /// csv or jsonl.
    #[arg(long)]
    report_format: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let flags = [
            ("arch", &self.arch),
            ("depth", &self.depth),
            ("fusion", &self.fusion),
            ("n_classes", &self.n_classes),
            ("input_size", &self.input_size),
            ("trunk_channels", &self.trunk_channels),
            ("branch_hidden", &self.branch_hidden),
            ("reduce_channels", &self.reduce_channels),
            ("dropout_rate", &self.dropout_rate),
            ("seed", &self.seed),
            ("lr", &self.lr),
            ("momentum", &self.momentum),
            ("weight_decay", &self.weight_decay),
            ("lr_policy", &self.lr_policy),
            ("lr_factor", &self.lr_factor),
            ("lr_every", &self.lr_every),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("data", &self.data),
            ("train_data", &self.train_data),
            ("val_data", &self.val_data),
            ("test_data", &self.test_data),
            ("split", &self.split),
            ("noise_rate", &self.noise_rate),
            ("out_dir", &self.out_dir),
            ("report_format", &self.report_format),
        ];
        let mut out: Vec<_> = flags
            .into_iter()
            .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
            .collect();
        if self.crops {
            out.push(("crops", "true".into()));
        }
        out
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Continue from this checkpoint up to `epochs` total epochs.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Average probabilities over the center and four corner crops.
    #[arg(long)]
    crops: bool,
    /// Report path (.csv or .jsonl); defaults to eval.csv beside the checkpoint.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value = "mldrnet")]
    arch: String,
    /// A fusion kind or "all".
    #[arg(long, default_value = "all")]
    fusion: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,
    /// Skip the per-layer checks.
    #[arg(long)]
    no_layers: bool,
    /// Corrupt one backward pass (harness self-test).
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args)]
struct AblateArgs {
    /// depth, fusion or noise.
    #[arg(long)]
    axis: String,
    /// Comma-separated variants; defaults depend on the axis.
    #[arg(long)]
    variants: Option<String>,
    #[command(flatten)]
    run: RunArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
