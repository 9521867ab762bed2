use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "dgclr", version = env!("DGCLR_VERSION"), about = "Review-aware rating prediction with disentangled graph contrastive learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read (or synthesize) interactions, optionally whiten reviews, split 8:1:1.
    Ingest(IngestArgs),
    /// Train a model and write a checkpoint plus per-epoch history.
    Train(TrainArgs),
    /// Report MSE of a checkpoint on one split.
    Evaluate(EvaluateArgs),
    /// Show the per-factor breakdown of one prediction.
    Explain(ExplainArgs),
    /// Train and evaluate ablation variants over several seeds.
    Ablate(AblateArgs),
    /// Time forward+backward on random graphs of increasing size.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Interaction file (`# d=.. ratings=..` header, tab-separated rows).
    #[arg(
        long,
        required_unless_present = "synthetic",
        conflicts_with = "synthetic"
    )]
    pub input: Option<PathBuf>,
    /// Binary review vectors (DGCLRV1) matching the interaction rows.
    #[arg(long, requires = "input")]
    pub vectors: Option<PathBuf>,
    /// Generate a planted-factor dataset instead of reading one.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 50)]
    pub users: usize,
    #[arg(long, default_value_t = 40)]
    pub items: usize,
    #[arg(long, default_value_t = 600)]
    pub interactions: usize,
    /// Review dimension of the synthetic data.
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    /// Planted factors of the synthetic data.
    #[arg(long, default_value_t = 2)]
    pub factors: usize,
    /// Seed of the synthetic generator.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Whiten review vectors to this many dimensions (fitted on train rows).
    #[arg(long)]
    pub whiten_dim: Option<usize>,
    #[arg(long = "split-seed", default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Where interactions and split labels come from.
#[derive(Debug, Args, Clone, Default)]
pub struct DataArgs {
    /// Interaction file, or a directory written by `ingest`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Split manifest; without one the data is split with `split_seed`.
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// Binary review vectors matching the interaction rows.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
}

/// Overrides for config file keys. Flag names mirror the keys.
#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long = "L")]
    pub l: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long = "edge-keep-ratio")]
    pub edge_keep_ratio: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "split-seed")]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long = "cl-stabilized")]
    pub cl_stabilized: Option<bool>,
}

impl ConfigArgs {
    /// `(config key, value)` for every flag given.
    pub fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut put = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        put("d", self.d.map(|v| v.to_string()));
        put("K", self.k.map(|v| v.to_string()));
        put("L", self.l.map(|v| v.to_string()));
        put("tau", self.tau.map(|v| v.to_string()));
        put("eta", self.eta.map(|v| v.to_string()));
        put(
            "edge_keep_ratio",
            self.edge_keep_ratio.map(|v| v.to_string()),
        );
        put("lambda1", self.lambda1.map(|v| v.to_string()));
        put("lambda2", self.lambda2.map(|v| v.to_string()));
        put("lr", self.lr.map(|v| v.to_string()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("batch_size", self.batch_size.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("split_seed", self.split_seed.map(|v| v.to_string()));
        put("patience", self.patience.map(|v| v.to_string()));
        put("variant", self.variant.clone());
        put("cl_stabilized", self.cl_stabilized.map(|v| v.to_string()));
        out
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Clip predictions to the rating range before scoring.
    #[arg(long)]
    pub clip: bool,
    /// Comma-separated training-degree bucket boundaries.
    #[arg(long, value_delimiter = ',', default_values_t = dgclr::evalx::DEFAULT_BOUNDARIES)]
    pub boundaries: Vec<usize>,
    /// Data location; defaults to the one recorded in the checkpoint.
    #[command(flatten)]
    pub data: DataArgs,
    /// Report directory; defaults to the checkpoint's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub user: String,
    #[arg(long)]
    pub item: String,
    #[command(flatten)]
    pub data: DataArgs,
    /// Also write the factor/review sample table.
    #[arg(long)]
    pub factor_report: bool,
    /// Score threshold for the factor/review table.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Ratings sampled in the factor/review table.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 3.0, 5.0])]
    pub ratings: Vec<f64>,
    /// Samples per (factor, rating) cell.
    #[arg(long, default_value_t = 1)]
    pub per_cell: usize,
    /// Seed for the factor/review sampling.
    #[arg(long, default_value_t = 0)]
    pub sample_seed: u64,
    /// Also export per-edge se/st/s scores for every layer.
    #[arg(long)]
    pub export_scores: bool,
    /// Output directory; defaults to the checkpoint's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Comma-separated variant names; all variants by default.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0, 1, 2, 3, 4])]
    pub seeds: Vec<u64>,
    /// Number of runs in flight, each in its own process.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Internal: run one (variant, seed) directly into --out.
    #[arg(long, hide = true)]
    pub worker: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated edge counts.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1000, 10000, 100000])]
    pub edges: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    pub d: usize,
    #[arg(long = "K", default_value_t = 4)]
    pub k: usize,
    #[arg(long = "L", default_value_t = 2)]
    pub l: usize,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}
