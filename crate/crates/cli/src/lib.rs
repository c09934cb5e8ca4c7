//! The `botstream` command line: streaming scoring, training, and the
//! experiment commands.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod bench;
pub mod commands;
pub mod error;
pub mod output;
pub mod score;

pub use error::CliError;
pub use score::Format;

#[derive(Debug, Parser)]
#[command(name = "botstream", version, about = "Social bot scoring from account metadata")]
pub struct RunConfig {
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a stream of records.
    Score(ScoreArgs),
    /// Train a forest on labeled datasets.
    Train(TrainArgs),
    /// Build the screen-name bigram model.
    BuildBigrams(BigramArgs),
    /// Extract feature vectors from raw records into a CSV.
    Extract(ExtractArgs),
    /// PCA projections and kNN homogeneity per dataset.
    Characterize(CharacterizeArgs),
    /// Train on each dataset, test on every other.
    Matrix(MatrixArgs),
    /// Rank-product selection over dataset combinations.
    Select(SelectArgs),
    /// Precision, recall and F1 across decision thresholds.
    Threshold(ThresholdArgs),
    /// Time single-threaded scoring.
    Bench(BenchArgs),
    /// Write generated fixtures.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct ForestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = botstream_core::forest::DEFAULT_N_TREES)]
    pub trees: usize,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub min_samples_leaf: usize,
    /// Reweight classes inversely to their frequency.
    #[arg(long)]
    pub balanced: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// NDJSON records or a feature CSV; stdin when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Defaults to stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub model: PathBuf,
    /// Required for NDJSON input.
    #[arg(long)]
    pub bigrams: Option<PathBuf>,
    /// Adds a bot/human label at this score threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Output format; mirrors the input by default.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Keep input order. Output is always ordered; the flag is accepted
    /// for scripts that pass it.
    #[arg(long)]
    pub ordered: bool,
    /// Rejected-record sidecar; defaults to `<output>.rejected.ndjson`.
    #[arg(long)]
    pub rejects: Option<PathBuf>,
    /// Probe time for bare user objects that carry none.
    #[arg(long)]
    pub probe_time: Option<String>,
    #[arg(long, default_value_t = score::DEFAULT_CHUNK)]
    pub chunk: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labeled feature CSV or NDJSON files; repeat to train on their union.
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub bigrams: Option<PathBuf>,
    #[arg(long)]
    pub probe_time: Option<String>,
    #[command(flatten)]
    pub forest: ForestArgs,
}

#[derive(Debug, Args)]
pub struct BigramArgs {
    /// NDJSON records, or plain text with one screen name per line.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = botstream_core::screen_name::DEFAULT_SMOOTHING)]
    pub smoothing: f64,
    /// Count each distinct name once.
    #[arg(long)]
    pub unique: bool,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub bigrams: PathBuf,
    #[arg(long)]
    pub rejects: Option<PathBuf>,
    #[arg(long)]
    pub probe_time: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Space {
    Log,
    Raw,
}

#[derive(Debug, Args)]
pub struct CharacterizeArgs {
    #[arg(long)]
    pub registry: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub output: PathBuf,
    /// Restrict to these datasets (repeatable).
    #[arg(long = "dataset")]
    pub datasets: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = botstream_core::analysis::DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = botstream_core::analysis::DEFAULT_PER_CLASS)]
    pub per_class: usize,
    #[arg(long, default_value_t = botstream_core::analysis::DEFAULT_REPETITIONS)]
    pub reps: usize,
    #[arg(long, value_enum, default_value_t = Space::Log)]
    pub space: Space,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long = "dataset")]
    pub datasets: Vec<String>,
    #[arg(long, default_value_t = botstream_core::validation::DEFAULT_CV_FOLDS)]
    pub cv_folds: usize,
    #[command(flatten)]
    pub forest: ForestArgs,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub registry: PathBuf,
    /// Output directory for the report, winner manifest and model.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = botstream_core::validation::DEFAULT_CV_FOLDS)]
    pub cv_folds: usize,
    /// Most candidate forests held in memory at once.
    #[arg(long)]
    pub max_resident: Option<usize>,
    #[command(flatten)]
    pub forest: ForestArgs,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    /// Labeled feature CSV or NDJSON.
    #[arg(long)]
    pub input: PathBuf,
    /// Sweep CSV destination; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Score the input with this model. Without it, scores come from
    /// cross-validation on the input.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub bigrams: Option<PathBuf>,
    #[arg(long)]
    pub probe_time: Option<String>,
    #[arg(long, default_value_t = botstream_core::validation::DEFAULT_CV_FOLDS)]
    pub cv_folds: usize,
    #[arg(long, default_value_t = botstream_core::metrics::DEFAULT_GRID_RESOLUTION)]
    pub resolution: f64,
    #[command(flatten)]
    pub forest: ForestArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// NDJSON records; generated when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Requires --bigrams; a fixture model is trained when absent.
    #[arg(long, requires = "bigrams")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub bigrams: Option<PathBuf>,
    /// Generated record count.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report destination; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FixtureKind {
    /// Raw labeled NDJSON user records.
    Records,
    /// Separable labeled feature CSV.
    Features,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub kind: FixtureKind,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Cluster separation for feature fixtures.
    #[arg(long, default_value_t = 2.0)]
    pub separation: f64,
}

/// Runs a command inside a thread pool sized by `--workers`.
pub fn run(config: RunConfig) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| commands::dispatch(config.command))
}
