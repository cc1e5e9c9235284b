use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use editbench_core::dataset::Dimension;
use editbench_core::leaderboard::{OverallWeights, Slicing, DEFAULT_FLOOR};
use editbench_core::metrics::MetricKind;

const EXIT_CODES: &str = "Exit codes: 0 success, 1 invalid input data, 2 runtime error (I/O, network, usage).";

#[derive(Debug, Parser)]
#[command(
    name = "editbench",
    version,
    about = "Benchmark tooling for text-guided image editing: ratings to MOS, metric evaluation, leaderboards, rating campaigns",
    after_help = EXIT_CODES
)]
pub struct Cli {
    /// Log verbosity on stderr (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a manifest and, optionally, a ratings file against it.
    #[command(after_help = EXIT_CODES)]
    Validate(ValidateArgs),
    /// Turn raw ratings into per-item MOS and QA consensus files.
    #[command(after_help = EXIT_CODES)]
    Mos(MosArgs),
    /// Score a metric against human MOS and report agreement.
    #[command(after_help = EXIT_CODES)]
    Eval(EvalArgs),
    /// Evaluate the built-in full-reference metrics (all four unless --metric is given).
    #[command(name = "eval-baseline", after_help = EXIT_CODES)]
    EvalBaseline(BaselineArgs),
    /// Rank editing models by the weighted geometric mean of their mean MOS.
    #[command(after_help = EXIT_CODES)]
    Leaderboard(LeaderboardArgs),
    /// Write descriptive CSVs: MOS histograms, per-task and per-model summaries.
    #[command(after_help = EXIT_CODES)]
    Describe(DescribeArgs),
    /// Run the rating campaign service.
    #[command(after_help = EXIT_CODES)]
    Serve(ServeArgs),
    /// Run the bundled mock scorer (for testing --remote).
    #[command(name = "mock-scorer", after_help = EXIT_CODES)]
    MockScorer(MockArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Jsonl,
    Table,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Human-readable aligned table instead of line-delimited JSON.
    #[arg(long)]
    pub table: bool,
    /// Write the report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Manifest (JSONL); image paths resolve against its directory.
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Ratings file (JSONL) to check against the manifest.
    #[arg(long, value_name = "FILE")]
    pub ratings: Option<PathBuf>,
    /// Skip decoding the image headers referenced by the manifest.
    #[arg(long)]
    pub no_verify_images: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Normalization {
    PerDimension,
    Pooled,
}

#[derive(Debug, Args)]
pub struct MosArgs {
    /// Raw ratings (JSONL), one record per subject and item.
    #[arg(long, value_name = "FILE")]
    pub ratings: PathBuf,
    /// Also check that every rated item exists in this manifest.
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Where to write per-item MOS records.
    #[arg(long, value_name = "FILE")]
    pub mos_out: PathBuf,
    /// Where to write per-item QA consensus records.
    #[arg(long, value_name = "FILE")]
    pub qa_out: Option<PathBuf>,
    /// Outlier multiplier for items whose ratings look normal.
    #[arg(long, default_value_t = 2.0)]
    pub normal_k: f64,
    /// Outlier multiplier for items whose ratings do not look normal.
    #[arg(long, default_value_t = 20f64.sqrt())]
    pub nonnormal_k: f64,
    /// A subject is dropped when more than this share of its ratings are outliers.
    #[arg(long, default_value_t = 0.05)]
    pub subject_reject_fraction: f64,
    /// Kurtosis band counted as normal, as LOW,HIGH.
    #[arg(long, value_name = "LOW,HIGH", default_value = "2,4", value_parser = parse_band)]
    pub normality_kurtosis_band: (f64, f64),
    /// Subject mean and spread for z-scores: per dimension or pooled over all three.
    #[arg(long, value_enum, default_value_t = Normalization::PerDimension)]
    pub normalization: Normalization,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SliceArg {
    Global,
    PerTier,
    PerTask,
    All,
}

impl SliceArg {
    pub fn slicing(self) -> Slicing {
        match self {
            SliceArg::Global => Slicing::GLOBAL,
            SliceArg::PerTier => Slicing {
                per_tier: true,
                per_task: false,
            },
            SliceArg::PerTask => Slicing {
                per_tier: false,
                per_task: true,
            },
            SliceArg::All => Slicing::ALL,
        }
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Manifest (JSONL); image paths resolve against its directory.
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Human MOS file, as written by `mos`.
    #[arg(long, value_name = "FILE")]
    pub mos: PathBuf,
    /// QA consensus file; enables accuracy lines.
    #[arg(long, value_name = "FILE")]
    pub qa: Option<PathBuf>,
    /// Slices to report besides the global one.
    #[arg(long, value_enum, default_value_t = SliceArg::All)]
    pub slice: SliceArg,
    /// Overall-score weights for the per-model comparison, as Q,A,P.
    #[arg(long, value_name = "Q,A,P", default_value = "0.3,0.4,0.3", value_parser = parse_weights)]
    pub weights: OverallWeights,
    /// Non-positive model means are lifted to this value before ranking.
    #[arg(long, default_value_t = DEFAULT_FLOOR)]
    pub floor: f64,
    /// Skip decoding the image headers referenced by the manifest.
    #[arg(long)]
    pub no_verify_images: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false)]
pub struct SourceArgs {
    /// A built-in metric, as builtin:NAME (mse, psnr, ssim, gmsd).
    #[arg(long, value_name = "builtin:NAME", value_parser = parse_builtin, group = "source")]
    pub metric: Option<MetricKind>,
    /// A score file with precomputed predictions.
    #[arg(long, value_name = "FILE", group = "source")]
    pub scores: Option<PathBuf>,
    /// Base URL of a scoring service.
    #[arg(long, value_name = "URL", group = "source")]
    pub remote: Option<String>,
}

#[derive(Debug, Args)]
pub struct RemoteArgs {
    /// Dimensions to request from the remote scorer.
    #[arg(long, value_delimiter = ',', default_value = "quality,alignment,preservation")]
    pub dimensions: Vec<Dimension>,
    /// Do not request yes/no answers.
    #[arg(long)]
    pub no_qa: bool,
    #[arg(long, default_value_t = 8)]
    pub concurrency: usize,
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    /// Retries after the first attempt.
    #[arg(long, default_value_t = 3)]
    pub retries: usize,
    /// First retry delay; doubles on each further retry.
    #[arg(long, default_value_t = 1000)]
    pub backoff_ms: u64,
    #[arg(long, default_value = "remote")]
    pub metric_name: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub remote: RemoteArgs,
    /// Also save the predictions as a score file.
    #[arg(long, value_name = "FILE")]
    pub save_scores: Option<PathBuf>,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// Metrics to run; repeat or comma-separate. Default: all four.
    #[arg(long, value_delimiter = ',')]
    pub metric: Vec<MetricKind>,
    #[command(flatten)]
    pub report: ReportArgs,
}

#[derive(Debug, Args)]
pub struct LeaderboardArgs {
    /// Manifest (JSONL); image paths resolve against its directory.
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Human MOS file.
    #[arg(long, value_name = "FILE", required_unless_present = "scores")]
    pub mos: Option<PathBuf>,
    /// QA consensus file; without it accuracy is zero for every model.
    #[arg(long, value_name = "FILE")]
    pub qa: Option<PathBuf>,
    /// Rank by a metric's predictions instead of human MOS.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["mos", "qa"])]
    pub scores: Option<PathBuf>,
    #[arg(long, value_name = "Q,A,P", default_value = "0.3,0.4,0.3", value_parser = parse_weights)]
    pub weights: OverallWeights,
    #[arg(long, default_value_t = DEFAULT_FLOOR)]
    pub floor: f64,
    /// Skip decoding the image headers referenced by the manifest.
    #[arg(long)]
    pub no_verify_images: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    /// Manifest (JSONL); image paths resolve against its directory.
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Human MOS file, as written by `mos`.
    #[arg(long, value_name = "FILE")]
    pub mos: PathBuf,
    /// Directory for the CSV files (created if missing).
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Skip decoding the image headers referenced by the manifest.
    #[arg(long)]
    pub no_verify_images: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Service config (TOML). EDITBENCH_PORT and EDITBENCH_DATA_DIR override it.
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct MockArgs {
    #[arg(long, default_value = "127.0.0.1:0")]
    pub bind: SocketAddr,
    /// Answer every score request with this value.
    #[arg(long, conflicts_with = "scores", default_value_t = 50.0)]
    pub constant: f64,
    /// Serve the predictions of this score file, matched by image and prompt content.
    #[arg(long, value_name = "FILE", requires = "manifest")]
    pub scores: Option<PathBuf>,
    /// Manifest used to locate the images behind --scores.
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
}

fn parse_builtin(s: &str) -> Result<MetricKind, String> {
    let name = s
        .strip_prefix("builtin:")
        .ok_or_else(|| format!("expected builtin:NAME, got `{s}`"))?;
    name.parse()
}

fn parse_weights(s: &str) -> Result<OverallWeights, String> {
    s.parse().map_err(|e: editbench_core::leaderboard::LeaderboardError| e.to_string())
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or_else(|| format!("expected LOW,HIGH, got `{s}`"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("`{lo}`: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("`{hi}`: {e}"))?;
    Ok((lo, hi))
}
