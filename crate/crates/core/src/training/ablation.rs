use crate::error::{Error, Result};
use crate::geometry::Dataset;
use crate::model::{LossMode, ModelConfig};

use super::{linear_probe, pretrain, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct SigmaRow {
    pub sigma2: f64,
    /// Test-split hop accuracy of the pretrained backbone.
    pub hop_acc: f64,
    /// Test-split probe accuracy.
    pub cls_acc: f64,
}

/// Pretrains and probes once per kernel variance, all under the same seed.
pub fn ablate_sigma(
    values: &[f64],
    dataset: &Dataset,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<Vec<SigmaRow>> {
    if let Some(bad) = values.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::config(format!("sigma2 must be positive, got {bad}")));
    }
    values
        .iter()
        .map(|&sigma2| {
            let cfg = ModelConfig {
                sigma2,
                ..model.clone()
            };
            let (hop_acc, cls_acc) = pretrain_and_probe(dataset, &cfg, config)?;
            Ok(SigmaRow {
                sigma2,
                hop_acc,
                cls_acc,
            })
        })
        .collect()
}

/// Columns `sigma2,hop_acc,cls_acc`.
pub fn sigma_csv(rows: &[SigmaRow]) -> String {
    let mut out = String::from("sigma2,hop_acc,cls_acc\n");
    for r in rows {
        out.push_str(&format!("{:?},{},{}\n", r.sigma2, r.hop_acc, r.cls_acc));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionVariant {
    /// Every layer's switch off: plain self-attention over parts.
    SelfAttention,
    /// Configured switches, hop loss on the last layer only.
    LastLayerLoss,
    /// Configured switches, hop loss on every layer.
    AllLayerLoss,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 3] = [
        AttentionVariant::SelfAttention,
        AttentionVariant::LastLayerLoss,
        AttentionVariant::AllLayerLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttentionVariant::SelfAttention => "sa",
            AttentionVariant::LastLayerLoss => "hga_last_layer_loss",
            AttentionVariant::AllLayerLoss => "hga_all_layer_loss",
        }
    }

    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        match self {
            AttentionVariant::SelfAttention => ModelConfig {
                loss: LossMode::All,
                ..base.clone().with_uniform_lambda(false)
            },
            AttentionVariant::LastLayerLoss => ModelConfig {
                loss: LossMode::Last,
                ..base.clone()
            },
            AttentionVariant::AllLayerLoss => ModelConfig {
                loss: LossMode::All,
                ..base.clone()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRow {
    pub variant: AttentionVariant,
    pub hop_acc: f64,
    pub cls_acc: f64,
}

/// Self-attention against hop-aware attention under both loss modes,
/// each pretrained and probed with the same protocol and seed.
pub fn ablate_attention(
    dataset: &Dataset,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<Vec<AttentionRow>> {
    AttentionVariant::ALL
        .iter()
        .map(|&variant| {
            let (hop_acc, cls_acc) = pretrain_and_probe(dataset, &variant.apply(model), config)?;
            Ok(AttentionRow {
                variant,
                hop_acc,
                cls_acc,
            })
        })
        .collect()
}

/// Columns `variant,hop_acc,cls_acc`.
pub fn attention_csv_table(rows: &[AttentionRow]) -> String {
    let mut out = String::from("variant,hop_acc,cls_acc\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            r.variant.name(),
            r.hop_acc,
            r.cls_acc
        ));
    }
    out
}

fn pretrain_and_probe(
    dataset: &Dataset,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<(f64, f64)> {
    let report = pretrain(dataset, model, config)?;
    let probe = linear_probe(&report.checkpoint, dataset, config)?;
    Ok((probe.metrics.hop_acc, probe.metrics.cls_acc.unwrap_or(0.0)))
}
