use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::autodiff::{sgd_step, OptimizerState, ParamId, Tape, Tensor, TensorError};
use crate::error::{Error, Result};
use crate::geometry::{augment, Dataset, Sample};
use crate::model::{ForwardOptions, Model, ModelConfig};

use super::{stream, Checkpoint, TrainConfig};

const SHUFFLE: u64 = 1;
const AUGMENT: u64 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// Counts from 1.
    pub epoch: usize,
    /// Mean total loss over the epoch's samples.
    pub loss: f64,
    /// Training hop accuracy, averaged over layers.
    pub hop_acc: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainReport {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochStats>,
}

impl PretrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    /// `epoch,loss,hop_acc,lr` rows.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("epoch,loss,hop_acc,lr\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.loss, e.hop_acc, e.lr));
        }
        out
    }
}

pub fn pretrain(
    dataset: &Dataset,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<PretrainReport> {
    pretrain_with(dataset, model, config, |_| {})
}

struct SampleResult {
    loss: f64,
    hits: Vec<(usize, usize)>,
    grads: Vec<(ParamId, Tensor)>,
}

/// Like [`pretrain`], calling `on_epoch` after every epoch.
pub fn pretrain_with(
    dataset: &Dataset,
    model_config: &ModelConfig,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats) + Send,
) -> Result<PretrainReport> {
    config.validate()?;
    let samples = &dataset.train;
    if samples.is_empty() {
        return Err(Error::config(
            "pretraining needs at least one training cloud",
        ));
    }
    let mut model = Model::new(model_config.clone())?;
    let steps_per_epoch = samples.len().div_ceil(config.batch_size);
    let mut opt = OptimizerState::new(
        config.sgd(config.lr, config.epochs * steps_per_epoch),
        model.params(),
    );
    let epochs = config.install(|| -> Result<Vec<EpochStats>> {
        let mut epochs = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            let lr = opt.current_lr();
            let mut order: Vec<usize> = (0..samples.len()).collect();
            order.shuffle(&mut stream(config.seed, SHUFFLE, epoch as u64, 0));
            let mut loss_sum = 0.0;
            let mut hits = vec![(0usize, 0usize); model_config.layers];
            for batch in order.chunks(config.batch_size) {
                let results: Vec<_> = batch
                    .par_iter()
                    .map(|&i| sample_step(&model, &samples[i], config, epoch, i))
                    .collect();
                let scale = 1.0 / batch.len() as f64;
                let params = model.params_mut();
                for r in results {
                    let r = r?;
                    loss_sum += r.loss;
                    for (acc, (c, t)) in hits.iter_mut().zip(r.hits) {
                        acc.0 += c;
                        acc.1 += t;
                    }
                    for (id, g) in &r.grads {
                        let slot = params.grad_mut(*id).data_mut();
                        for (s, v) in slot.iter_mut().zip(g.data()) {
                            *s += scale * v;
                        }
                    }
                }
                sgd_step(params, &mut opt);
            }
            let stats = EpochStats {
                epoch: epoch + 1,
                loss: loss_sum / samples.len() as f64,
                hop_acc: mean_accuracy(&hits),
                lr,
            };
            on_epoch(&stats);
            epochs.push(stats);
        }
        Ok(epochs)
    })??;
    let mut checkpoint = Checkpoint::new(model);
    checkpoint.set_meta("stage", "pretrain");
    checkpoint.set_meta("epochs", config.epochs);
    checkpoint.set_meta("seed", config.seed);
    checkpoint.set_meta("train_samples", samples.len());
    if let Some(last) = epochs.last() {
        checkpoint.set_meta("final_loss", format!("{:?}", last.loss));
        checkpoint.set_meta("final_hop_acc", format!("{:?}", last.hop_acc));
    }
    Ok(PretrainReport { checkpoint, epochs })
}

fn sample_step(
    model: &Model,
    sample: &Sample,
    config: &TrainConfig,
    epoch: usize,
    index: usize,
) -> Result<SampleResult> {
    let cloud = match &config.augment {
        Some(params) => {
            let mut rng = stream(config.seed, AUGMENT, epoch as u64, index as u64);
            augment(&sample.cloud, params, &mut rng)?
        }
        None => sample.cloud.clone(),
    };
    let (partition, hops) = model.ground_truth(&cloud)?;
    let mut tape = Tape::new();
    let non_finite = |e: Error| match e {
        Error::Tensor(TensorError::NonFinite { .. }) => Error::NonFiniteLoss {
            sample: sample.name.clone(),
        },
        other => other,
    };
    let out = model
        .forward(
            &mut tape,
            &cloud,
            &partition,
            &hops,
            &ForwardOptions::loss_only(),
        )
        .map_err(non_finite)?;
    let loss = tape.value(out.loss).item();
    let hits = out.hop_hits(&tape, &hops);
    let grads = tape
        .backward(out.loss)
        .map_err(|e| non_finite(e.into()))?
        .params()
        .to_vec();
    Ok(SampleResult { loss, hits, grads })
}

pub(crate) fn mean_accuracy(hits: &[(usize, usize)]) -> f64 {
    let per_layer: Vec<f64> = hits
        .iter()
        .map(|&(c, t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
        .collect();
    per_layer.iter().sum::<f64>() / per_layer.len().max(1) as f64
}
