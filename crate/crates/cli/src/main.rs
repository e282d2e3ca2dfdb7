//! `dgcn`: data generation, training, captioning, evaluation and experiments.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "dgcn", version, about = "Dual-GCN transformer captioning with cross-review curriculum training")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Configuration layering shared by every command that trains.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// JSON configuration file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Defaults to layer the file onto: `full` or `toy`.
    #[arg(long)]
    pub profile: Option<String>,
    /// Override one field, e.g. `--set model.neighbors=4` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Corpus directory with `features.dgrf` and `captions.jsonl`.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for independent trainings.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (features.dgrf + captions.jsonl).
    GenData(ConfigArgs),
    /// Train one model, with the curriculum when enabled.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from a training checkpoint.
        #[arg(long, value_name = "CKPT")]
        resume: Option<PathBuf>,
    },
    /// Caption every image of a feature file as JSON lines.
    Caption(commands::CaptionArgs),
    /// Score a checkpoint on one split; one CSV row per image.
    Eval(commands::EvalArgs),
    /// Train shard models and write the difficulty table.
    CrossReview(ConfigArgs),
    /// Build a stage schedule from a difficulty table.
    Schedule(commands::ScheduleArgs),
    /// Compare encoder/decoder/curriculum variants over several seeds.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Variant label such as "GCN_obj + Transformer + CL" (repeatable);
        /// `table` selects all eleven comparison rows.
        #[arg(long = "variant")]
        variants: Vec<String>,
    },
    /// Rerun the pipeline for each value of K or M.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `K` (image neighbours) or `M` (curriculum shards).
        #[arg(long)]
        param: String,
        /// Comma-separated values or an inclusive range such as `3..9`.
        #[arg(long)]
        values: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::GenData(c) => commands::gen_data(&c),
        Command::Train { cfg, resume } => commands::train(&cfg, resume.as_deref()),
        Command::Caption(a) => commands::caption(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::CrossReview(c) => commands::cross_review(&c),
        Command::Schedule(a) => commands::schedule(&a),
        Command::Ablate { cfg, variants } => commands::ablate(&cfg, &variants),
        Command::Sweep { cfg, param, values } => commands::sweep(&cfg, &param, &values),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
