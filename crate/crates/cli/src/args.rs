use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use proulearn::adapt::Strategy;
use proulearn::bench::MmdKernel;
use proulearn::correlation::Similarity;
use proulearn::data::FileFormat;
use proulearn::hpe::DepthBase;

/// Source-free active domain adaptation on feature embeddings.
///
/// Progress and results go to stdout as JSON lines; logs go to stderr.
/// Exit codes: 0 success, 2 bad arguments, 3 I/O or format error,
/// 4 numeric failure.
#[derive(Debug, Parser)]
#[command(name = "proulearn", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Master seed; overrides any seed in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file with settings; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Data file format; by default `.csv` files are CSV and all others binary.
    #[arg(long, global = true, value_parser = parse_format)]
    pub format: Option<FileFormat>,
    /// Skip the first line of CSV inputs.
    #[arg(long, global = true)]
    pub csv_header: bool,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the source model with label-smoothed cross-entropy.
    Pretrain(PretrainArgs),
    /// Choose the active set on target features.
    Select(SelectArgs),
    /// Adapt a source model to target features.
    Adapt(AdaptArgs),
    /// Compare selection strategies on the synthetic shift benchmark.
    Bench(BenchArgs),
    /// Class-to-centroid discrepancy of a model's embeddings.
    Mmd(MmdArgs),
    /// Write a synthetic source/target pair.
    SynthGen(SynthGenArgs),
}

fn parse_format(s: &str) -> Result<FileFormat, String> {
    s.parse().map_err(|e: proulearn::Error| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: proulearn::Error| e.to_string())
}

fn parse_metric(s: &str) -> Result<Similarity, String> {
    s.parse().map_err(|e: proulearn::Error| e.to_string())
}

fn parse_kernel(s: &str) -> Result<MmdKernel, String> {
    s.parse().map_err(|e: proulearn::Error| e.to_string())
}

fn parse_depth_base(s: &str) -> Result<DepthBase, String> {
    match s {
        "subset" => Ok(DepthBase::Subset),
        "full" => Ok(DepthBase::Full),
        other => Err(format!("unknown depth base {other:?}; valid: subset, full")),
    }
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out_model: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub label_smoothing: Option<f64>,
    /// Backbone widths, e.g. `32` or `64,32`.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
}

/// Selection knobs shared by `select` and `adapt`.
#[derive(Debug, Args, Clone)]
pub struct SelectionFlags {
    /// Fraction of target samples to label, in (0, 1].
    #[arg(long)]
    pub budget: Option<f64>,
    /// Neighbors per sample; 0 disables neighborhood exclusion.
    #[arg(long)]
    pub k: Option<usize>,
    /// Trees in the homogeneity ensemble.
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long, value_parser = parse_depth_base)]
    pub depth_base: Option<DepthBase>,
    /// correlation, cosine or euclidean.
    #[arg(long, value_parser = parse_metric)]
    pub metric: Option<Similarity>,
    /// hpe, random, entropy or kmeans.
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Target features.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub labels_oracle: PathBuf,
    /// Active set JSON.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub selection: SelectionFlags,
    /// Write the neighbor graph as CSV.
    #[arg(long)]
    pub dump_knn: Option<PathBuf>,
    /// Write per-sample homogeneity, entropy and selection scores as CSV.
    #[arg(long)]
    pub dump_scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Target features.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels_oracle: PathBuf,
    #[arg(long)]
    pub out_model: PathBuf,
    /// Report JSON; defaults to `<out-model>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-epoch CSV; defaults to `<out-model>.epochs.csv`.
    #[arg(long)]
    pub epochs_csv: Option<PathBuf>,
    #[command(flatten)]
    pub selection: SelectionFlags,
    #[command(flatten)]
    pub training: TrainingFlags,
    /// Append pseudo-labels of every refinement round to this CSV.
    #[arg(long)]
    pub dump_pseudo: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct TrainingFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Backbone learning rate; the bottleneck uses ten times this.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Decay all learning rates as `(1 + 10 p)^-0.75` over training.
    #[arg(long)]
    pub lr_decay: bool,
    /// Keep sample order fixed across epochs.
    #[arg(long)]
    pub no_shuffle: bool,
    /// Train without the central correlation loss.
    #[arg(long)]
    pub ablate_cc: bool,
    #[arg(long)]
    pub freeze_classifier: bool,
    /// Recompute homogeneity scores at every refinement.
    #[arg(long)]
    pub refresh_hpe: bool,
    /// linear or rbf.
    #[arg(long, value_parser = parse_kernel)]
    pub mmd_kernel: Option<MmdKernel>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Synthetic benchmark spec (JSON); defaults to the standard shifted spec.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Comma-separated subset of random, entropy, kmeans, hpe.
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
    pub strategies: Option<Vec<Strategy>>,
    /// Number of paired seeds, starting at `--seed`.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Directory for bench_report.json, accuracy.csv and mmd.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub training: TrainingFlags,
    #[command(flatten)]
    pub selection: SelectionFlags,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MmdArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Labels grouping the samples (oracle or pseudo).
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, value_parser = parse_kernel)]
    pub mmd_kernel: Option<MmdKernel>,
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    /// Spec JSON; individual flags override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub source_per_class: Option<usize>,
    #[arg(long)]
    pub target_per_class: Option<usize>,
    #[arg(long)]
    pub rotation: Option<f64>,
    #[arg(long)]
    pub translation: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub outlier_fraction: Option<f64>,
    /// Zero shift, zero noise, no outliers.
    #[arg(long)]
    pub null_shift: bool,
}
