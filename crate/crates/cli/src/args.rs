//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Parser, Serialize, Deserialize)]
#[command(name = "zcgauge", version, about = "Zero-cost proxy scoring, score tables and their analyses")]
pub struct Cli {
    /// Worker threads for compute, entropy and nas [default: logical cores]
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "snake_case")]
pub enum Command {
    /// Compute all proxies over a search space and store the score table
    Compute(ComputeArgs),
    /// Generate a synthetic score table with planted structure
    Synth(SynthArgs),
    /// Convert an external score file into a canonical table
    Import(ImportArgs),
    /// Correlation, ranking and information-theoretic analyses
    Analyze(AnalyzeArgs),
    /// Bias measurement and mitigation
    Bias(BiasArgs),
    /// Predictor-guided search over a score table
    Nas(NasArgs),
    /// Re-run the command recorded in a manifest
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Compute(_) => "compute",
            Command::Synth(_) => "synth",
            Command::Import(_) => "import",
            Command::Analyze(_) => "analyze",
            Command::Bias(_) => "bias",
            Command::Nas(_) => "nas",
            Command::Replay(_) => "replay",
        }
    }

    pub fn seed_mut(&mut self) -> Option<&mut u64> {
        match self {
            Command::Compute(a) => Some(&mut a.seed),
            Command::Synth(a) => Some(&mut a.seed),
            Command::Analyze(a) => Some(&mut a.seed),
            Command::Nas(a) => Some(&mut a.seed),
            Command::Import(_) | Command::Bias(_) | Command::Replay(_) => None,
        }
    }

    pub fn out_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            Command::Compute(a) => Some(&mut a.out),
            Command::Synth(a) => Some(&mut a.out),
            Command::Import(a) => Some(&mut a.out),
            Command::Analyze(a) => Some(&mut a.out),
            Command::Bias(a) => Some(&mut a.out),
            Command::Nas(a) => Some(&mut a.out),
            Command::Replay(_) => None,
        }
    }

    /// Output depends only on the arguments and input files.
    pub fn deterministic(&self) -> bool {
        !matches!(self, Command::Compute(_) | Command::Replay(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Nb201,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKindArg {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ComputeArgs {
    /// Search space to enumerate
    #[arg(long, value_enum, default_value_t = Space::Nb201)]
    pub space: Space,
    /// Score only the first N cells in enumeration order [default: all]
    #[arg(long)]
    pub limit: Option<usize>,
    /// Output table path
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "ZCGAUGE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Minibatch size
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, value_enum, default_value_t = TaskKindArg::Classification)]
    pub task_kind: TaskKindArg,
    /// JSON object mapping architecture id to {"val_acc", "train_time"}
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Rows computed between checkpoint flushes
    #[arg(long, default_value_t = 64)]
    pub chunk: usize,
    #[arg(long, default_value = "nb201")]
    pub benchmark: String,
    #[arg(long, default_value = "desk")]
    pub task: String,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Number of architectures
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, env = "ZCGAUGE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output table path
    #[arg(long)]
    pub out: PathBuf,
    /// Standard deviation of the accuracy noise
    #[arg(long, default_value_t = 0.5)]
    pub noise_sd: f64,
    #[arg(long, value_enum, default_value_t = TaskKindArg::Classification)]
    pub task_kind: TaskKindArg,
    #[arg(long, default_value = "synthetic")]
    pub benchmark: String,
    #[arg(long, default_value = "planted")]
    pub task: String,
    /// Full generator spec as JSON; replaces every other generator flag
    #[arg(long, conflicts_with_all = ["n", "noise_sd", "task_kind", "benchmark", "task"])]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ImportArgs {
    /// External score file
    #[arg(long)]
    pub input: PathBuf,
    /// Input format: canonical, or naslib-zc[:task]
    #[arg(long, default_value = "naslib-zc")]
    pub format: String,
    /// Output table path
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisKind {
    /// Spearman correlation of every proxy with accuracy, per table
    Corr,
    /// Precision@K of every proxy
    Prec,
    /// BestRanking@K of every proxy
    Bestrank,
    /// Full entropy report
    Entropy,
    /// Pairwise information gain
    Ig,
    /// Greedy, random and exhaustive proxy orderings
    Orderings,
    /// Correlation between tables
    Xbench,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KModeArg {
    Absolute,
    Fraction,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AnalyzeArgs {
    #[arg(value_enum)]
    pub kind: AnalysisKind,
    /// Score table; repeat for several tables
    #[arg(long, required = true)]
    pub table: Vec<PathBuf>,
    /// K values for prec and bestrank
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub k: Vec<f64>,
    /// Interpretation of --k
    #[arg(long, value_enum, default_value_t = KModeArg::Absolute)]
    pub k_mode: KModeArg,
    /// Random orderings averaged
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Histogram bins: auto (Sturges) or a positive integer
    #[arg(long, default_value = "auto")]
    pub bins: String,
    /// Largest subset size of the exhaustive ordering
    #[arg(long, default_value_t = 13)]
    pub k_max: usize,
    /// Rows sampled for entropy estimates
    #[arg(long, default_value_t = 1000)]
    pub sample: usize,
    #[arg(long, env = "ZCGAUGE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Report path; CSV when it ends in .csv, JSON otherwise
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasAction {
    /// Bias of proxies against structural metrics
    Measure,
    /// Rescale one proxy to reduce its bias
    Mitigate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum MetricArg {
    ConvPool,
    CellSize,
    NumSkip,
    NumParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyArg {
    Minimize,
    Equalize,
    Performance,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BiasArgs {
    #[arg(value_enum)]
    pub action: BiasAction,
    /// Score table
    #[arg(long)]
    pub table: PathBuf,
    /// Proxy id; required for mitigate
    #[arg(long)]
    pub proxy: Option<String>,
    /// Structural metric; required for mitigate
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    #[arg(long, value_enum, default_value_t = StrategyArg::Minimize)]
    pub strategy: StrategyArg,
    /// Lower end of the constant grid
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    pub grid_lo: f64,
    /// Upper end of the constant grid
    #[arg(long, default_value_t = 1000.0)]
    pub grid_hi: f64,
    /// Grid intervals
    #[arg(long, default_value_t = 10_000)]
    pub grid_steps: usize,
    /// Report path; CSV when it ends in .csv, JSON otherwise
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgoArg {
    Bananas,
    Npenas,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturesArg {
    Encoding,
    Zc,
    Both,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct NasArgs {
    /// Score table
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long, value_enum, default_value_t = AlgoArg::Bananas)]
    pub algo: AlgoArg,
    /// Surrogate input features
    #[arg(long, value_enum, default_value_t = FeaturesArg::Both)]
    pub features: FeaturesArg,
    /// Evaluations per trial
    #[arg(long, default_value_t = 200)]
    pub budget: usize,
    /// Random evaluations before the surrogate is used
    #[arg(long, default_value_t = 10)]
    pub init: usize,
    /// Candidates scored per iteration
    #[arg(long, default_value_t = 100)]
    pub candidates: usize,
    /// Independent trials
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long, env = "ZCGAUGE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Trace CSV path
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run
    pub manifest: PathBuf,
    /// Write the output here instead of the recorded path
    #[arg(long)]
    pub out: Option<PathBuf>,
}
