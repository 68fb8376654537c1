//! `cwetrace`: ingest NVD feeds, train per-node CWE classifiers, classify
//! CVE descriptions and evaluate predictions.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cwetrace::Error;

#[derive(Parser)]
#[command(name = "cwetrace", version, about = "Hierarchical CVE to CWE classification")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert an NVD JSON feed into corpus JSONL.
    Ingest(IngestArgs),
    /// Train a model and save it to a directory.
    Train(TrainArgs),
    /// Classify descriptions from a corpus file or stdin.
    Classify(ClassifyArgs),
    /// Score a model or saved predictions against labeled records.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct IngestArgs {
    /// NVD JSON 1.1 feed.
    #[arg(value_name = "FEED")]
    feed: PathBuf,
    /// Output corpus (JSONL).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Baseline {
    Flat,
    TwoLayer,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    taxonomy: PathBuf,
    /// Labeled corpus (JSONL).
    #[arg(long)]
    corpus: PathBuf,
    /// Output model directory.
    #[arg(long)]
    model: PathBuf,
    /// Stopword list, one word per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Synonym groups (JSON).
    #[arg(long)]
    synonyms: Option<PathBuf>,
    /// Pipeline configuration (JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dictionary occurrence threshold.
    #[arg(long)]
    th: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Hidden width of the two-layer baseline.
    #[arg(long, default_value_t = cwetrace::hierarchy::DEFAULT_HIDDEN_SIZE)]
    hidden: usize,
    /// Train on this fraction of the corpus (seeded by --seed).
    #[arg(long)]
    split: Option<f64>,
    /// Directory for per-node `epoch,loss` CSV logs.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Mode {
    Threshold,
    Topk,
}

#[derive(Args)]
pub struct ModeArgs {
    #[arg(long, value_enum, default_value = "threshold")]
    mode: Mode,
    /// Score threshold (default: the model's decision threshold).
    #[arg(long)]
    tau: Option<f64>,
    /// Children kept per node in top-k mode.
    #[arg(long, default_value_t = 1)]
    k: usize,
}

#[derive(Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Records to classify (JSONL); reads one description from stdin if absent.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Prediction output (JSONL); stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    mode: ModeArgs,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Model to run; also supplies the taxonomy.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Saved predictions (JSONL) to score instead of running a model.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Taxonomy, when scoring saved predictions without a model.
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Labeled records (JSONL).
    #[arg(long)]
    corpus: PathBuf,
    /// Score only the held-out part of this train fraction.
    #[arg(long)]
    split: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Second model directory or predictions file to compare against.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Report path (JSON); the table goes next to it with a .txt extension.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    mode: ModeArgs,
}

/// 2: input or configuration, 3: training, 4: model integrity.
fn exit_code(err: &anyhow::Error) -> u8 {
    let core = err.chain().find_map(|e| e.downcast_ref::<Error>());
    match core {
        Some(Error::Training(_)) => 3,
        Some(Error::Integrity(_) | Error::Version { .. } | Error::MissingManifest(_)) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: --jobs: {e}");
            return ExitCode::from(2);
        }
    }

    let result = match &cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Train(a) => commands::train(a),
        Command::Classify(a) => commands::classify(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
