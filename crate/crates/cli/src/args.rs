use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use xai_eval_core::aggregate::WeightVector;
use xai_eval_core::consistency::DistanceKind;
use xai_eval_core::ingest::MergeFallback;
use xai_eval_core::robustness::SalienceTier;
use xai_eval_core::{MetricKind, PerturbationKind};

#[derive(Debug, Parser)]
#[command(name = "xai-eval", version, about = "Score feature-attribution explanations from record files")]
pub struct Cli {
    /// Worker threads for per-instance work (0 = all cores). Output does
    /// not depend on this value.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    /// Write the primary output here instead of stdout.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and check record files; list every issue.
    Validate(CorpusArgs),
    /// Human-reasoning agreement (MAP over rationale-annotated instances).
    Ha(HaArgs),
    /// Mean average saliency difference over perturbation pairs.
    Robustness(CorpusArgs),
    /// Spearman correlation of attention and explanation distances across two seeds.
    Consistency(ConsistencyArgs),
    /// Mean KL divergence between class-specific explanations.
    Contrastivity(ContrastivityArgs),
    /// Emit perturbation plans for the exporter.
    Plan(PlanArgs),
    /// Merge metric fragments and compute the combined weighted score.
    Cws(CwsArgs),
    /// Render report tables or plot data.
    Report(ReportArgs),
    /// Recompute the published combined-score table from the per-metric tables.
    VerifyPaper(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    /// Record files (any record type).
    #[arg(value_name = "FILE")]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub explanations: Vec<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub annotations: Vec<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub pairs: Vec<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub attention: Vec<PathBuf>,
    /// Downgrade dangling references and mask mismatches to warnings and drop
    /// the affected pairs.
    #[arg(long)]
    pub lenient: bool,
    /// What to do when annotators share no majority word.
    #[arg(long, value_enum, default_value_t = FallbackArg::Fail)]
    pub annotation_fallback: FallbackArg,
}

impl CorpusArgs {
    pub fn paths(&self) -> Vec<PathBuf> {
        let mut all: Vec<PathBuf> = self
            .inputs
            .iter()
            .chain(&self.explanations)
            .chain(&self.annotations)
            .chain(&self.pairs)
            .chain(&self.attention)
            .cloned()
            .collect();
        all.sort();
        all.dedup();
        all
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FallbackArg {
    Fail,
    Union,
}

impl From<FallbackArg> for MergeFallback {
    fn from(f: FallbackArg) -> Self {
        match f {
            FallbackArg::Fail => MergeFallback::Fail,
            FallbackArg::Union => MergeFallback::Union,
        }
    }
}

#[derive(Debug, Args)]
pub struct HaArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Rank cutoff n; defaults to each instance's rationale size.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub top_k: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ConsistencyArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Base model id; explanations for each seed use `<model>@<seed>`.
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub seed_a: String,
    #[arg(long)]
    pub seed_b: String,
    /// Restrict to one method (default: every method present for both seeds).
    #[arg(long)]
    pub method: Option<String>,
    /// Restrict to one dataset.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long, value_enum, default_value_t = DistanceArg::Cosine)]
    pub distance: DistanceArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistanceArg {
    Cosine,
    Euclidean,
}

impl From<DistanceArg> for DistanceKind {
    fn from(d: DistanceArg) -> Self {
        match d {
            DistanceArg::Cosine => DistanceKind::Cosine,
            DistanceArg::Euclidean => DistanceKind::Euclidean,
        }
    }
}

#[derive(Debug, Args)]
pub struct ContrastivityArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Additive smoothing before normalization.
    #[arg(long, default_value_t = xai_eval_core::contrastivity::DEFAULT_EPSILON, value_parser = parse_epsilon)]
    pub epsilon: f64,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Model whose explanations drive the ranking (required if several).
    #[arg(long)]
    pub model: Option<String>,
    /// Method whose explanations drive the ranking (required if several).
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, value_enum, default_value_t = KindArg::Mask)]
    pub kind: KindArg,
    /// Share of words to perturb, in (0, 1].
    #[arg(long, default_value_t = 0.15, value_parser = parse_fraction)]
    pub fraction: f64,
    #[arg(long, value_enum, default_value_t = TierArg::High)]
    pub tier: TierArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Mask,
    Delete,
    Synonym,
}

impl From<KindArg> for PerturbationKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Mask => PerturbationKind::Mask,
            KindArg::Delete => PerturbationKind::Delete,
            KindArg::Synonym => PerturbationKind::Synonym,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TierArg {
    High,
    Low,
}

impl From<TierArg> for SalienceTier {
    fn from(t: TierArg) -> Self {
        match t {
            TierArg::High => SalienceTier::High,
            TierArg::Low => SalienceTier::Low,
        }
    }
}

#[derive(Debug, Args)]
pub struct CwsArgs {
    /// Metric fragment files produced by the metric subcommands.
    #[arg(value_name = "FRAGMENT", required = true)]
    pub fragments: Vec<PathBuf>,
    /// Weights for ha,cn,ct,r; must be non-negative and sum to 1.
    #[arg(long, default_value = "0.25,0.25,0.25,0.25", value_parser = parse_weights)]
    pub weights: WeightVector,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metric report files (fragments or merged reports).
    #[arg(value_name = "REPORT")]
    pub reports: Vec<PathBuf>,
    /// Use the embedded reference tables instead of report files.
    #[arg(long, conflicts_with = "reports")]
    pub paper_fixture: bool,
    /// One of ha, robustness, consistency, contrastivity, cws
    #[arg(long, value_parser = parse_metric)]
    pub metric: MetricKind,
    #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
    pub format: ReportFormat,
    /// Dataset to render (required when reports span several).
    #[arg(long)]
    pub dataset: Option<String>,
    /// Comma-separated preferred method order.
    #[arg(long, value_delimiter = ',')]
    pub method_order: Vec<String>,
    /// Comma-separated preferred model order.
    #[arg(long, value_delimiter = ',')]
    pub model_order: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Markdown,
    Plot,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value = "0.25,0.25,0.25,0.25", value_parser = parse_weights)]
    pub weights: WeightVector,
    #[arg(long, default_value_t = xai_eval_core::aggregate::DEFAULT_TOLERANCE, value_parser = parse_tolerance)]
    pub tolerance: f64,
    /// Exit 1 if any of the required cells fails to match.
    #[arg(long)]
    pub strict: bool,
    #[arg(long, value_enum, default_value_t = VerifyFormat::Csv)]
    pub format: VerifyFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VerifyFormat {
    Csv,
    Json,
}

fn parse_weights(s: &str) -> Result<WeightVector, String> {
    s.parse().map_err(|e: xai_eval_core::aggregate::AggregateError| e.to_string())
}

fn parse_metric(s: &str) -> Result<MetricKind, String> {
    s.parse()
}

fn parse_positive_finite(s: &str, what: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{what} must be a number"))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(format!("{what} must be positive and finite"));
    }
    Ok(v)
}

fn parse_epsilon(s: &str) -> Result<f64, String> {
    parse_positive_finite(s, "epsilon")
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let v = parse_positive_finite(s, "fraction")?;
    if v > 1.0 {
        return Err("fraction must lie in (0, 1]".into());
    }
    Ok(v)
}

fn parse_tolerance(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| "tolerance must be a number".to_string())?;
    if !(v.is_finite() && v >= 0.0) {
        return Err("tolerance must be non-negative and finite".into());
    }
    Ok(v)
}
