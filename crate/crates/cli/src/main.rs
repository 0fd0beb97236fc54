//! `movekit`: ingestion, annotation, statistics and evaluation on local files, plus a
//! client for the review service.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or service error.

mod commands;
mod review;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use movekit::classifier::Variant;
use movekit::stats::Partition;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Service(#[from] movekit_client::ClientError),
}

impl CliError {
    pub fn data(e: impl std::fmt::Display) -> CliError {
        CliError::Data(e.to_string())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::Service(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "movekit",
    version,
    about = "Move-structure annotation of research-article abstracts"
)]
struct Cli {
    /// Log level for the structured lines written to standard error.
    #[arg(long, global = true, default_value = "info", env = "MOVEKIT_LOG",
          value_parser = ["off", "error", "warn", "info", "debug", "trace"])]
    log_level: String,
    /// Segmenter configuration (JSON); defaults to the built-in abbreviation list.
    #[arg(long, global = true, value_name = "FILE")]
    segmenter: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract unlabeled abstracts from a BibTeX file or a tabular export.
    Ingest(IngestArgs),
    /// Train a classifier on an annotated corpus.
    Train(TrainArgs),
    /// Label every abstract of a corpus with a trained model.
    Annotate(AnnotateArgs),
    /// Label frequency, occurrence and per-abstract aggregates.
    Stats(StatsArgs),
    /// Score predictions against gold annotations.
    Eval(EvalArgs),
    /// Train and score several classifier variants on one split.
    Compare(CompareArgs),
    /// Run the review service.
    Serve(ServeArgs),
    /// Talk to a running review service.
    Review(ReviewArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["bib", "tabular"])))]
pub struct IngestArgs {
    #[arg(long, value_name = "FILE")]
    pub bib: Option<PathBuf>,
    /// CSV or TSV export; needs --map.
    #[arg(long, value_name = "FILE", requires = "map")]
    pub tabular: Option<PathBuf>,
    /// Column mapping such as `id=ID,title=TI,abstract=AB,year=PY`.
    #[arg(long, value_name = "COLSPEC")]
    pub map: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Id of the first extracted abstract when the input has no id column.
    #[arg(long, default_value_t = 1)]
    pub first_id: i64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Output model directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Dev corpus for early stopping and best-epoch selection.
    #[arg(long, value_name = "FILE")]
    pub dev: Option<PathBuf>,
    #[arg(long, default_value = "plain")]
    pub variant: Variant,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

/// Training settings shared by `train` and `compare`.
#[derive(Debug, Args)]
pub struct HyperArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Full model configuration (JSON); the variant flag still applies.
    #[arg(long, value_name = "FILE", conflicts_with = "toy")]
    pub model_config: Option<PathBuf>,
    /// Use a very small encoder (fast, for experiments on small corpora).
    #[arg(long)]
    pub toy: bool,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long, value_name = "DIR")]
    pub model: PathBuf,
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// field, discipline or none.
    #[arg(long, default_value = "field")]
    pub partition: Partition,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub gold: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub pred: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "plain,context,saliency")]
    pub variants: Vec<Variant>,
    /// Share of abstracts used for training.
    #[arg(long, default_value_t = 0.8)]
    pub ratio: f64,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Service configuration (JSON); defaults apply without it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Overrides the configured port.
    #[arg(long)]
    pub port: Option<u16>,
}

#[derive(Debug, Args)]
pub struct ReviewArgs {
    /// Base URL of the review service.
    #[arg(long, env = "MOVEKIT_SERVICE", default_value = "http://127.0.0.1:8080")]
    pub service: String,
    #[arg(long, value_enum, default_value = "text", global = true)]
    pub format: Format,
    #[command(subcommand)]
    pub command: review::ReviewCommand,
}

fn init_logging(level: &str) {
    let level: tracing_subscriber::filter::LevelFilter = level
        .parse()
        .unwrap_or(tracing_subscriber::filter::LevelFilter::INFO);
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(level)
        .with_target(false)
        .init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    let seg = commands::segmenter(cli.segmenter.as_deref())?;
    match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Train(a) => commands::train(&a, &seg),
        Command::Annotate(a) => commands::annotate(&a, &seg),
        Command::Stats(a) => commands::stats(&a, &seg),
        Command::Eval(a) => commands::eval(&a, &seg),
        Command::Compare(a) => commands::compare(&a, &seg),
        Command::Serve(a) => commands::serve(&a, cli.segmenter),
        Command::Review(a) => review::run(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    init_logging(&cli.log_level);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
