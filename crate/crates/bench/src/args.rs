use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Seed used by every randomized subcommand when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 20_150_101;

#[derive(Debug, Parser)]
#[command(
    name = "wta",
    version,
    about = "WTA-hashed sparse output layer: data, training, sweeps, timing"
)]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic clustered dataset.
    Gen(GenArgs),
    /// Train a layer in dense or hashed mode.
    Train(TrainArgs),
    /// Report top-1 accuracy of trained weights.
    Eval(EvalArgs),
    /// Hashed accuracy and forward time over a grid of (A, Q).
    Sweep(SweepArgs),
    /// Time one weight update, per phase or over an N ladder.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Dense,
    Hashed,
}

impl From<ModeArg> for wta_core::Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Dense => wta_core::Mode::Dense,
            ModeArg::Hashed => wta_core::Mode::Hashed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    /// Every row.
    All,
    /// The rows `train` held out for the same seed.
    Heldout,
    /// The rows `train` trained on for the same seed.
    Train,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct HashArgs {
    /// Number of hashes Q.
    #[arg(long, default_value_t = 256)]
    pub num_hashes: usize,
    /// Sections per hash N_s.
    #[arg(long, default_value_t = 3)]
    pub sections: usize,
    /// Elements per section N_e.
    #[arg(long, default_value_t = 8)]
    pub elems: usize,
    /// Active units per sample A.
    #[arg(long, default_value_t = 32)]
    pub active: usize,
    /// Logit of units outside the active set.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub default_logit: f32,
    /// Rebuild the index every this many batches.
    #[arg(long, default_value_t = 1)]
    pub rehash_period: usize,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 100)]
    pub classes: u32,
    /// Feature dimension K.
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    /// Gaussian spread around each centroid.
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f32,
    /// Fraction of centroid coordinates set to zero.
    #[arg(long, default_value_t = 0.75)]
    pub sparsity: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Report CSV (`elapsed_s,epoch,batch,split,top1,loss`).
    #[arg(long)]
    pub out: PathBuf,
    /// Final weights (`WTAW`).
    #[arg(long)]
    pub weights: PathBuf,
    /// Phase timing CSV; defaults to the report path with `.phases.csv`.
    #[arg(long)]
    pub phases: Option<PathBuf>,
    /// Also write the permutations (`WTAP`) used in hashed mode.
    #[arg(long)]
    pub perms: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Dense)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f32,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Evaluate every this many batches; 0 for epoch ends only.
    #[arg(long, default_value_t = 0)]
    pub eval_every: usize,
    /// Fraction of rows held out for evaluation.
    #[arg(long, default_value_t = 0.1)]
    pub holdout: f64,
    /// Disable forcing the label unit into the active set.
    #[arg(long)]
    pub no_label_force: bool,
    #[command(flatten)]
    pub hash: HashArgs,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Dense)]
    pub mode: ModeArg,
    /// Permutations to use in hashed mode instead of regenerating them.
    #[arg(long)]
    pub perms: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Heldout)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 0.1)]
    pub holdout: f64,
    #[command(flatten)]
    pub hash: HashArgs,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub weights: PathBuf,
    /// Sweep CSV (`A,Q,top1,forward_s`).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub a_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub q_list: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub sections: usize,
    #[arg(long, default_value_t = 8)]
    pub elems: usize,
    #[arg(long, value_enum, default_value_t = SplitArg::Heldout)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 0.1)]
    pub holdout: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Batch size.
    #[arg(long = "M", default_value_t = 64)]
    pub m: usize,
    /// Input dimension.
    #[arg(long = "K", default_value_t = 256)]
    pub k: usize,
    /// Output units (ignored with `--n-ladder`).
    #[arg(long = "N", default_value_t = 8192)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    /// Comma-separated N values; switches to `N,impl,median_s` output.
    #[arg(long, value_delimiter = ',')]
    pub n_ladder: Option<Vec<usize>>,
    #[command(flatten)]
    pub hash: HashArgs,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}
