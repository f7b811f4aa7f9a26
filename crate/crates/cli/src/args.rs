use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use aclaw::correspondence::{Aggregation, Similarity, DEFAULT_ALPHA};
use aclaw::evaluator::DEFAULT_RUNS;
use aclaw::fit::{Basis, Evaluation};
use aclaw::policy::SamplingMode;

/// Score vision representations, fit the (A, C) performance law and pick
/// which settings to finetune.
#[derive(Debug, Parser)]
#[command(name = "aclaw", version)]
pub struct Cli {
    /// Print a JSON document instead of the text summary.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Correspondence score (PCK) from a pairs file and feature tensors.
    Cscore(CscoreArgs),
    /// Alignment score from caption token log-probabilities.
    Ascore(AscoreArgs),
    /// R² of the performance regression on every benchmark.
    Fit(FitArgs),
    /// Operate the budgeted selection policy through a state file.
    #[command(subcommand)]
    Policy(PolicyCommand),
    /// Monte Carlo recall of the policy and of random subset testing.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct CscoreArgs {
    /// Pairs JSONL, one annotation per line with `ftf_src` / `ftf_trg`.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Directory the FTF paths are relative to [default: the pairs file's directory].
    #[arg(long)]
    pub ftf_dir: Option<PathBuf>,
    /// PCK threshold as a fraction of the larger bounding-box side.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = SimilarityArg::Cosine)]
    pub similarity: SimilarityArg,
    #[arg(long, value_enum, default_value_t = AggregationArg::Global)]
    pub aggregation: AggregationArg,
}

#[derive(Debug, Args)]
pub struct AscoreArgs {
    /// Log-prob JSONL: {"image_id": ..., "token_logprobs": [...]} per line.
    #[arg(long)]
    pub logprobs: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct TableArgs {
    /// AC table CSV (setting,a,c) [default: bundled 15-setting table].
    #[arg(long)]
    pub ac: Option<PathBuf>,
    /// Benchmark CSV (setting,benchmark,category,score) [default: bundled table].
    #[arg(long)]
    pub bench: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub tables: TableArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Ac)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = BasisArg::Quadratic)]
    pub basis: BasisArg,
    #[arg(long, value_enum, default_value_t = EvaluationArg::InSample)]
    pub evaluation: EvaluationArg,
    /// Seed for `--mode random`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum PolicyCommand {
    /// Create a new state file.
    Init(PolicyInitArgs),
    /// Suggest the next setting to finetune.
    Suggest(StateArg),
    /// Record the measured performance of a suggested setting.
    Record(PolicyRecordArgs),
    /// Rank all settings by the fitted law.
    Rank(StateArg),
}

#[derive(Debug, Args)]
pub struct StateArg {
    /// Policy state file.
    #[arg(long, default_value = "aclaw-policy.json")]
    pub state: PathBuf,
}

#[derive(Debug, Args)]
pub struct PolicyInitArgs {
    #[command(flatten)]
    pub state: StateArg,
    /// AC table CSV [default: bundled 15-setting table].
    #[arg(long)]
    pub ac: Option<PathBuf>,
    /// Number of finetuning runs to spend.
    #[arg(long)]
    pub budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SamplingArg::LevelExhaustion)]
    pub sampling_mode: SamplingArg,
    /// Replace an existing state file.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PolicyRecordArgs {
    #[command(flatten)]
    pub state: StateArg,
    #[arg(long)]
    pub setting: String,
    #[arg(long, allow_negative_numbers = true)]
    pub performance: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub tables: TableArgs,
    /// Benchmarks to simulate [default: all].
    #[arg(long = "benchmark")]
    pub benchmarks: Vec<String>,
    /// Finetuning budgets, comma separated.
    #[arg(long = "budget", value_delimiter = ',', default_values_t = vec![4usize])]
    pub budgets: Vec<usize>,
    /// Policy runs per (benchmark, budget).
    #[arg(long, default_value_t = DEFAULT_RUNS)]
    pub runs: usize,
    /// Runs for the random-subset baseline.
    #[arg(long, default_value_t = 10_000)]
    pub random_runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SamplingArg::LevelExhaustion)]
    pub sampling_mode: SamplingArg,
    /// Also write recall CSVs, R² CSV and summary JSON into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimilarityArg {
    Cosine,
    RawDot,
}

impl From<SimilarityArg> for Similarity {
    fn from(v: SimilarityArg) -> Self {
        match v {
            SimilarityArg::Cosine => Similarity::Cosine,
            SimilarityArg::RawDot => Similarity::RawDot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    Global,
    PerCategory,
}

impl From<AggregationArg> for Aggregation {
    fn from(v: AggregationArg) -> Self {
        match v {
            AggregationArg::Global => Aggregation::Global,
            AggregationArg::PerCategory => Aggregation::PerCategory,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Ac,
    #[value(name = "a_only")]
    AOnly,
    #[value(name = "c_only")]
    COnly,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisArg {
    Linear,
    Quadratic,
}

impl From<BasisArg> for Basis {
    fn from(v: BasisArg) -> Self {
        match v {
            BasisArg::Linear => Basis::Linear,
            BasisArg::Quadratic => Basis::Quadratic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvaluationArg {
    InSample,
    LeaveOneOut,
}

impl From<EvaluationArg> for Evaluation {
    fn from(v: EvaluationArg) -> Self {
        match v {
            EvaluationArg::InSample => Evaluation::InSample,
            EvaluationArg::LeaveOneOut => Evaluation::LeaveOneOut,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplingArg {
    #[value(name = "iteration_subdivision")]
    IterationSubdivision,
    #[value(name = "level_exhaustion")]
    LevelExhaustion,
}

impl From<SamplingArg> for SamplingMode {
    fn from(v: SamplingArg) -> Self {
        match v {
            SamplingArg::IterationSubdivision => SamplingMode::IterationSubdivision,
            SamplingArg::LevelExhaustion => SamplingMode::LevelExhaustion,
        }
    }
}
