//! Two-stage protocol: self-supervised pretraining on the hop loss, then a
//! linear probe on frozen global descriptors. Also evaluation, checkpoints
//! and the ablation sweeps.
//!
//! Samples in a batch run on separate tapes, possibly in parallel; their
//! gradients are averaged in sample order before each optimizer step, so
//! results do not depend on the thread count.

mod ablation;
mod checkpoint;
mod evaluate;
mod pretrain;
mod probe;

pub use ablation::{
    ablate_attention, ablate_sigma, attention_csv_table, sigma_csv, AttentionRow, AttentionVariant,
    SigmaRow,
};
pub use checkpoint::{config_hash, Checkpoint, CheckpointError, ProbeHead, FORMAT_VERSION, MAGIC};
pub use evaluate::{evaluate, hop_accuracy};
pub use pretrain::{pretrain, pretrain_with, EpochStats, PretrainReport};
pub use probe::{linear_probe, probe_subset, ProbeReport};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::SgdConfig;
use crate::error::{Error, Result};
use crate::geometry::AugmentParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Augmentation applied to pretraining clouds; `None` trains on the
    /// clouds as stored.
    pub augment: Option<AugmentParams>,
    pub seed: u64,
    /// Fraction of the training split used by the probe.
    pub train_fraction: f64,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub probe_dropout: f64,
    /// Worker threads for per-sample work; 0 uses all cores.
    pub threads: usize,
}

impl Default for TrainConfig {
    /// Desk-scale settings.
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            augment: Some(AugmentParams::pretraining()),
            seed: 1,
            train_fraction: 1.0,
            probe_epochs: 30,
            probe_lr: 0.05,
            probe_dropout: 0.5,
            threads: 0,
        }
    }
}

impl TrainConfig {
    /// Reference optimizer settings at full scale: batch 32, lr 0.1.
    pub fn paper() -> Self {
        Self {
            batch_size: 32,
            lr: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::config(format!(
                "train fraction must be in (0, 1], got {}",
                self.train_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.probe_dropout) {
            return Err(Error::config(format!(
                "probe dropout must be in [0, 1), got {}",
                self.probe_dropout
            )));
        }
        if !(self.lr > 0.0 && self.probe_lr > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }

    pub(crate) fn sgd(&self, lr: f64, total_steps: usize) -> SgdConfig {
        SgdConfig {
            base_lr: lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            total_steps,
        }
    }

    /// Runs `f` on a pool sized by `threads`.
    pub(crate) fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        Ok(pool.install(f))
    }
}

/// Independent stream for one use of randomness, keyed by purpose and
/// position so the draw does not depend on scheduling.
pub(crate) fn stream(seed: u64, purpose: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream((a << 32) | (b & 0xffff_ffff));
    rng
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean over layers of the fraction of valid pairs whose argmax class
    /// equals the ground-truth hop.
    pub hop_acc: f64,
    pub hop_acc_per_layer: Vec<f64>,
    /// Present when a probe head was evaluated.
    pub cls_acc: Option<f64>,
    /// Mean self-supervised loss over the evaluated clouds.
    pub loss: f64,
    /// Per-epoch training loss, empty for pure evaluation.
    pub loss_curve: Vec<f64>,
    pub samples: usize,
}

impl Metrics {
    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("hop_acc,{}\n", self.hop_acc));
        for (l, a) in self.hop_acc_per_layer.iter().enumerate() {
            out.push_str(&format!("hop_acc_layer{},{a}\n", l + 1));
        }
        if let Some(c) = self.cls_acc {
            out.push_str(&format!("cls_acc,{c}\n"));
        }
        out.push_str(&format!("loss,{}\n", self.loss));
        out.push_str(&format!("samples,{}\n", self.samples));
        out
    }
}
