use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dhgcn::geometry::AugmentParams;
use dhgcn::model::{parse_switch, KernelMode, LossMode, PoolMode};
use dhgcn::partition::{DEFAULT_BOX_SCALE, DEFAULT_SPLIT};
use dhgcn::{DatasetSpec, ModelConfig, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "dhgcn",
    version,
    about = "Hop-distance self-supervised learning on point clouds"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic labelled dataset with a seeded train/test split.
    GenData(GenDataArgs),
    /// Voxelize one cloud and write its ground-truth hop matrix.
    Partition(PartitionArgs),
    /// Self-supervised pretraining on a dataset's training split.
    Pretrain(PretrainArgs),
    /// Train a linear classifier on frozen descriptors of a checkpoint.
    Probe(ProbeArgs),
    /// Hop and classification metrics of a checkpoint.
    Eval(EvalArgs),
    /// Pretrain and probe once per kernel variance.
    AblateSigma(AblateSigmaArgs),
    /// Pretrain and probe self-attention against hop-aware attention.
    AblateAttention(AblateAttentionArgs),
    /// Compare analytic and numeric gradients of the pretraining loss.
    Gradcheck(GradcheckArgs),
    /// Write attention weights and hop predictions for one cloud.
    ExportAttention(ExportAttentionArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DatasetSpec::default().classes)]
    pub classes: usize,
    #[arg(long, default_value_t = DatasetSpec::default().per_class)]
    pub per_class: usize,
    #[arg(long, default_value_t = DatasetSpec::default().points)]
    pub points: usize,
    /// Per-class fraction held out for testing.
    #[arg(long, default_value_t = DatasetSpec::default().test_fraction)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

impl GenDataArgs {
    pub fn spec(&self) -> DatasetSpec {
        DatasetSpec {
            classes: self.classes,
            per_class: self.per_class,
            points: self.points,
            seed: self.seed,
            test_fraction: self.test_fraction,
        }
    }
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    /// Cloud in XYZ text format.
    #[arg(long)]
    pub input: PathBuf,
    /// Cells per axis.
    #[arg(long, default_value_t = DEFAULT_SPLIT)]
    pub split: usize,
    /// Enlargement of each part's bounding box about its center.
    #[arg(long, default_value_t = DEFAULT_BOX_SCALE)]
    pub scale: f64,
    #[arg(long)]
    pub out_hops: PathBuf,
}

/// Overrides of the model config; unset flags keep the defaults.
#[derive(Clone, Debug, Default, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    /// Neighbors of the point convolution, self included.
    #[arg(long)]
    pub neighbors: Option<usize>,
    /// Cells per axis of the part grid.
    #[arg(long)]
    pub split: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Kernel variance.
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Per-layer hop-embedding switches, e.g. `0,1,1`.
    #[arg(long, value_delimiter = ',', value_parser = parse_flag)]
    pub lambda: Option<Vec<bool>>,
    #[arg(long)]
    pub fusion_channels: Option<usize>,
    #[arg(long)]
    pub box_scale: Option<f64>,
    #[arg(long)]
    pub kernel: Option<KernelArg>,
    #[arg(long)]
    pub loss: Option<LossArg>,
    #[arg(long)]
    pub pool: Option<PoolArg>,
    /// Per-sample normalization of hidden activations, `0` or `1`.
    #[arg(long, value_parser = parse_flag)]
    pub normalize: Option<bool>,
    /// Start from the small test-size config instead of the defaults.
    #[arg(long)]
    pub tiny: bool,
}

fn parse_flag(text: &str) -> Result<bool, String> {
    parse_switch(text).map_err(|e| e.to_string())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KernelArg {
    Soft,
    Argmax,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossArg {
    Last,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PoolArg {
    Max,
    MaxAvg,
}

impl ModelArgs {
    pub fn resolve(&self, seed: u64) -> ModelConfig {
        let base = if self.tiny {
            ModelConfig::tiny()
        } else {
            ModelConfig::default()
        };
        let mut cfg = ModelConfig {
            layers: self.layers.unwrap_or(base.layers),
            channels: self.channels.unwrap_or(base.channels),
            neighbors: self.neighbors.unwrap_or(base.neighbors),
            split: self.split.unwrap_or(base.split),
            heads: self.heads.unwrap_or(base.heads),
            sigma2: self.sigma2.unwrap_or(base.sigma2),
            lambda: self.lambda.clone().unwrap_or(base.lambda.clone()),
            fusion_channels: self.fusion_channels.unwrap_or(base.fusion_channels),
            box_scale: self.box_scale.unwrap_or(base.box_scale),
            kernel: match self.kernel {
                Some(KernelArg::Soft) => KernelMode::Soft,
                Some(KernelArg::Argmax) => KernelMode::Argmax,
                None => base.kernel,
            },
            loss: match self.loss {
                Some(LossArg::Last) => LossMode::Last,
                Some(LossArg::All) => LossMode::All,
                None => base.loss,
            },
            pool: match self.pool {
                Some(PoolArg::Max) => PoolMode::Max,
                Some(PoolArg::MaxAvg) => PoolMode::MaxAvg,
                None => base.pool,
            },
            normalize: self.normalize.unwrap_or(base.normalize),
            seed,
        };
        // a changed depth without explicit switches keeps the default
        // pattern: first layer off, the rest on
        if self.lambda.is_none() && cfg.lambda.len() != cfg.layers {
            cfg.lambda = (0..cfg.layers).map(|l| l > 0).collect();
        }
        cfg
    }
}

/// Overrides of the training config; unset flags keep the defaults.
#[derive(Clone, Debug, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Pretraining augmentation.
    #[arg(long)]
    pub augment: Option<AugmentArg>,
    #[arg(long)]
    pub probe_epochs: Option<usize>,
    #[arg(long)]
    pub probe_lr: Option<f64>,
    #[arg(long)]
    pub probe_dropout: Option<f64>,
    /// Worker threads; 0 uses every core, 1 is the reference order.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AugmentArg {
    None,
    Default,
}

impl TrainArgs {
    pub fn resolve(&self, seed: u64, train_fraction: f64) -> TrainConfig {
        let base = TrainConfig::default();
        TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            lr: self.lr.unwrap_or(base.lr),
            momentum: self.momentum.unwrap_or(base.momentum),
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
            augment: match self.augment {
                Some(AugmentArg::None) => None,
                Some(AugmentArg::Default) => Some(AugmentParams::pretraining()),
                None => base.augment,
            },
            seed,
            train_fraction,
            probe_epochs: self.probe_epochs.unwrap_or(base.probe_epochs),
            probe_lr: self.probe_lr.unwrap_or(base.probe_lr),
            probe_dropout: self.probe_dropout.unwrap_or(base.probe_dropout),
            threads: self.threads,
        }
    }
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Dataset root written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Seeds both the initialization and the training streams.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Pretrained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of the training split the classifier sees.
    #[arg(long, default_value_t = 1.0)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Which split to evaluate.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub on: SplitArg,
}

#[derive(Debug, Args)]
pub struct AblateSigmaArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Kernel variances to sweep.
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.5,1.0,2.0,5.0")]
    pub values: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct AblateAttentionArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seeds the parameters and the synthetic cloud.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Cloud to check on; a synthetic one is drawn when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Points of the synthetic cloud.
    #[arg(long, default_value_t = 64)]
    pub points: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub threshold: f64,
    /// Check this many random coordinates per parameter instead of all.
    #[arg(long)]
    pub per_param: Option<usize>,
    /// Directory for the manifest and log.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Overrides applied on top of the small test-size config.
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct ExportAttentionArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Cloud in XYZ text format.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
