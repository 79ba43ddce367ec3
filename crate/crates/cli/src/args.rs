use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vqd::metrics::AccuracyMetric;
use vqd::model::Normalization;

#[derive(Debug, Parser)]
#[command(
    name = "vqd",
    version,
    about = "Entropy-based difficulty analysis for visual question answering"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster questions by (H_I, H_Q, H_QI) and write a model file.
    Fit(FitArgs),
    /// Assign questions to the clusters of a fitted model.
    Assign(AssignArgs),
    /// Per-cluster and per-model tables for annotated questions.
    Report(ReportArgs),
    /// Entropy of every partition of n answers.
    Enumerate(EnumerateArgs),
    /// Strictly parse input files and report the first problem in each.
    Validate(ValidateArgs),
    /// Generate a synthetic annotated dataset with planted clusters.
    Synth(SynthArgs),
}

/// The three base-model prediction files that define the entropy features.
#[derive(Debug, Args)]
pub struct BasePreds {
    /// Image-only model predictions.
    #[arg(long)]
    pub pred_i: PathBuf,
    /// Question-only model predictions.
    #[arg(long)]
    pub pred_q: PathBuf,
    /// Image-and-question model predictions.
    #[arg(long)]
    pub pred_qi: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Annotation file; when given, predictions for unannotated questions are dropped.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[command(flatten)]
    pub preds: BasePreds,
    /// Answer vocabulary, required for distribution-mode predictions.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 300)]
    pub max_iters: usize,
    #[arg(long)]
    pub out_model: PathBuf,
    /// Defaults to fit_assignments.csv beside the model file.
    #[arg(long)]
    pub out_assignments: Option<PathBuf>,
    /// Fail on the first malformed record instead of skipping it.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub preds: BasePreds,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Simple,
    Averaged,
}

impl From<MetricArg> for AccuracyMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Simple => AccuracyMetric::Simple,
            MetricArg::Averaged => AccuracyMetric::Averaged,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormalizationArg {
    Basic,
    Extended,
}

impl From<NormalizationArg> for Normalization {
    fn from(n: NormalizationArg) -> Self {
        match n {
            NormalizationArg::Basic => Normalization::Basic,
            NormalizationArg::Extended => Normalization::Extended,
        }
    }
}

/// `name=path`.
pub fn named_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => {
            Ok((name.to_string(), PathBuf::from(path)))
        }
        _ => Err(format!("expected NAME=PATH, got {s:?}")),
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub assignments: PathBuf,
    /// Evaluated model predictions as MODEL_ID=PATH; repeatable.
    #[arg(long = "eval-preds", value_parser = named_path)]
    pub eval_preds: Vec<(String, PathBuf)>,
    /// Base-model predictions; give all three to add the I, Q and QI columns.
    #[arg(long)]
    pub pred_i: Option<PathBuf>,
    #[arg(long)]
    pub pred_q: Option<PathBuf>,
    #[arg(long)]
    pub pred_qi: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "simple")]
    pub metric: MetricArg,
    #[arg(long, value_enum, default_value = "basic")]
    pub normalization: NormalizationArg,
    /// Per-question score file as NAME=PATH (header question_id,score); repeatable.
    #[arg(long, value_parser = named_path)]
    pub aux: Vec<(String, PathBuf)>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct EnumerateArgs {
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Output directory for fig2_partitions.csv.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Prediction files; repeatable.
    #[arg(long, num_args = 1..)]
    pub preds: Vec<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON generator spec; without it the three-level preset is used.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Overrides the spec's seed when given.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Preset question count.
    #[arg(long, default_value_t = 3000, conflicts_with = "spec")]
    pub n: usize,
    /// Preset number of evaluated models.
    #[arg(long, default_value_t = 2, conflicts_with = "spec")]
    pub models: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}
