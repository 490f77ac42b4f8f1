use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::DatasetKind;
use crate::encoder::EncoderConfig;
use crate::pruning::PruneKind;
use crate::training::TrainConfig;

#[derive(Debug, Parser)]
#[command(
    name = "sbprune",
    version,
    about = "Layer pruning and siamese NLI/STS fine-tuning of small sentence encoders",
    args_override_self = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a freshly initialized model checkpoint.
    Init(InitArgs),
    /// Generate a synthetic dataset, or a full corpus directory.
    GenData(GenDataArgs),
    /// Fine-tune a checkpoint on NLI pairs.
    TrainNli(TrainArgs),
    /// Fine-tune a checkpoint on STS pairs.
    TrainSts(TrainArgs),
    /// NLI then STS fine-tuning in one run.
    Pipeline(PipelineArgs),
    /// Remove layers from a checkpoint.
    Prune(PruneArgs),
    /// Check that a pruned checkpoint matches its source under a strategy.
    VerifyPrune(VerifyArgs),
    /// Spearman/Pearson of embedding cosines against gold STS scores.
    EvalSts(EvalStsArgs),
    /// KNN classification accuracy over sentence embeddings.
    EvalKnn(EvalKnnArgs),
    /// Prune a base model with each strategy, fine-tune and score every arm.
    CompareStrategies(CompareArgs),
    /// Top-pruned base model against a same-size model trained from scratch.
    PrunedVsScratch(ScratchArgs),
}

/// Encoder shape; vocabulary size doubles as the synthetic corpus vocabulary.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 256)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub num_layers: usize,
    #[arg(long, default_value_t = 4)]
    pub num_heads: usize,
    #[arg(long, default_value_t = 64)]
    pub ffn_dim: usize,
    #[arg(long, default_value_t = 24)]
    pub max_seq_len: usize,
    #[arg(long, default_value_t = 1e-12)]
    pub layer_norm_eps: f64,
}

impl ModelArgs {
    pub fn config(&self, seed: u64) -> EncoderConfig {
        EncoderConfig {
            vocab_size: self.vocab_size,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            max_seq_len: self.max_seq_len,
            layer_norm_eps: self.layer_norm_eps,
            seed,
        }
    }
}

/// Optimizer and batching flags shared by every training command.
#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Truncate training sequences below the model's max_seq_len.
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub shuffle: bool,
}

impl OptimArgs {
    pub fn train_config(&self, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            seed,
            max_seq_len: self.max_len,
            shuffle: self.shuffle,
        }
    }
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    Nli,
    Sts,
    Cls,
    /// Every split of a synthetic corpus, written into the `--out` directory.
    Corpus,
}

impl GenKind {
    pub fn dataset_kind(self) -> Option<DatasetKind> {
        match self {
            GenKind::Nli => Some(DatasetKind::Nli),
            GenKind::Sts => Some(DatasetKind::Sts),
            GenKind::Cls => Some(DatasetKind::Cls),
            GenKind::Corpus => None,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_enum)]
    pub kind: GenKind,
    /// Example count; ignored for `corpus`, which uses the standard split sizes.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 3)]
    pub num_topics: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to 3 for NLI and 5 for STS.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub optim: OptimArgs,
}

/// Training inputs of the multi-phase commands. Anything not given is
/// synthesized from `--seed`: the corpus, and a fresh model of `ModelArgs`.
#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub nli: Option<PathBuf>,
    #[arg(long)]
    pub sts: Option<PathBuf>,
    /// STS pairs to score; the synthetic test split when omitted.
    #[arg(long)]
    pub sts_eval: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub num_topics: usize,
    #[arg(long, default_value_t = 3)]
    pub nli_epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub sts_epochs: usize,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_parser = parse_kind)]
    pub strategy: PruneKind,
    #[arg(long, allow_negative_numbers = true)]
    pub k: i64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long)]
    pub pruned: PathBuf,
    #[arg(long, value_parser = parse_kind)]
    pub strategy: PruneKind,
    #[arg(long, allow_negative_numbers = true)]
    pub k: i64,
}

#[derive(Debug, Args)]
pub struct EvalStsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalKnnArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
}

/// Base model for the experiments: `--base`, or trained by the pipeline from
/// a fresh model (default 12 layers, mirroring the full-size encoders).
#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 256)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 12)]
    pub num_layers: usize,
    #[arg(long, default_value_t = 4)]
    pub num_heads: usize,
    #[arg(long, default_value_t = 64)]
    pub ffn_dim: usize,
    #[arg(long, default_value_t = 24)]
    pub max_seq_len: usize,
    #[arg(long, default_value_t = 1e-12)]
    pub layer_norm_eps: f64,
}

impl ExperimentArgs {
    pub fn model(&self) -> ModelArgs {
        ModelArgs {
            vocab_size: self.vocab_size,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            max_seq_len: self.max_seq_len,
            layer_norm_eps: self.layer_norm_eps,
        }
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub k: i64,
    #[command(flatten)]
    pub exp: ExperimentArgs,
}

#[derive(Debug, Args)]
pub struct ScratchArgs {
    /// Defaults to half the base model's depth.
    #[arg(long)]
    pub target_layers: Option<usize>,
    #[command(flatten)]
    pub exp: ExperimentArgs,
}

fn parse_kind(s: &str) -> Result<PruneKind, String> {
    s.parse().map_err(|e: crate::Error| e.to_string())
}
