use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::autodiff::{sgd_step, OptimizerState, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{Dataset, Sample};

use super::{evaluate, stream, Checkpoint, Metrics, ProbeHead, TrainConfig};

const SUBSET: u64 = 11;
const INIT: u64 = 12;
const SHUFFLE: u64 = 13;
const DROPOUT: u64 = 14;

#[derive(Clone, Debug)]
pub struct ProbeReport {
    /// The input backbone with the trained head attached.
    pub checkpoint: Checkpoint,
    /// Test-split metrics with the trained head.
    pub metrics: Metrics,
    pub train_samples: usize,
    pub train_acc: f64,
}

/// Indices of the `⌈fraction·n⌉` training clouds used by the probe: a prefix
/// of one seeded permutation, so smaller fractions are subsets of larger ones.
pub fn probe_subset(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let take = ((fraction * n as f64).ceil() as usize).clamp(1, n.max(1));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, SUBSET, 0, 0));
    order.truncate(take);
    order
}

/// Trains a linear classifier on frozen global descriptors and evaluates
/// it on the test split. Descriptors are standardized with statistics of
/// the probe's training subset; the backbone is only read.
pub fn linear_probe(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<ProbeReport> {
    config.validate()?;
    let classes = dataset.num_classes();
    for s in dataset.train.iter().chain(&dataset.test) {
        match s.cloud.label {
            Some(l) if l < classes => {}
            Some(l) => {
                return Err(Error::ClassMismatch {
                    expected: classes,
                    got: l + 1,
                })
            }
            None => return Err(Error::config(format!("sample {} has no label", s.name))),
        }
    }
    if dataset.train.is_empty() {
        return Err(Error::config("probing needs at least one training cloud"));
    }
    let subset = probe_subset(dataset.train.len(), config.train_fraction, config.seed);
    let chosen: Vec<&Sample> = subset.iter().map(|&i| &dataset.train[i]).collect();
    let model = &checkpoint.model;
    let features = config.install(|| {
        chosen
            .par_iter()
            .map(|s| model.descriptor(&s.cloud).map(Tensor::into_data))
            .collect::<Result<Vec<_>>>()
    })??;
    let labels: Vec<usize> = chosen
        .iter()
        .map(|s| s.cloud.label.expect("checked"))
        .collect();
    let dim = model.config().descriptor_dim();

    let n = features.len() as f64;
    let shift: Vec<f64> = (0..dim)
        .map(|c| features.iter().map(|f| f[c]).sum::<f64>() / n)
        .collect();
    let scale: Vec<f64> = (0..dim)
        .map(|c| {
            let var = features
                .iter()
                .map(|f| (f[c] - shift[c]).powi(2))
                .sum::<f64>()
                / n;
            if var.sqrt() > 1e-12 {
                1.0 / var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let standardized: Vec<Vec<f64>> = features
        .iter()
        .map(|f| {
            f.iter()
                .zip(&shift)
                .zip(&scale)
                .map(|((x, m), s)| (x - m) * s)
                .collect()
        })
        .collect();

    let mut params = ParamStore::new();
    let mut rng = stream(config.seed, INIT, 0, 0);
    let w = params.insert_uniform(ProbeHead::WEIGHT, &[dim, classes], dim, &mut rng)?;
    let b = params.insert(ProbeHead::BIAS, Tensor::zeros(&[classes]))?;
    let steps = config.probe_epochs * subset.len().div_ceil(config.batch_size);
    let mut opt = OptimizerState::new(config.sgd(config.probe_lr, steps), &params);
    for epoch in 0..config.probe_epochs {
        let mut order: Vec<usize> = (0..subset.len()).collect();
        order.shuffle(&mut stream(config.seed, SHUFFLE, epoch as u64, 0));
        for (bi, batch) in order.chunks(config.batch_size).enumerate() {
            let x: Vec<f64> = batch
                .iter()
                .flat_map(|&i| standardized[i].iter().copied())
                .collect();
            let targets: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let xv = tape.leaf(Tensor::new(vec![batch.len(), dim], x)?);
            let mut drop_rng = stream(config.seed, DROPOUT, epoch as u64, bi as u64);
            let xv = tape.dropout(xv, config.probe_dropout, true, &mut drop_rng)?;
            let wv = tape.param(&params, w);
            let bv = tape.param(&params, b);
            let logits = tape.linear(xv, wv, bv)?;
            let loss = tape.cross_entropy_logits(logits, &targets)?;
            tape.backward(loss)?.accumulate_into(&mut params, 1.0);
            sgd_step(&mut params, &mut opt);
        }
    }
    params.insert(ProbeHead::SHIFT, Tensor::new(vec![dim], shift)?)?;
    params.insert(ProbeHead::SCALE, Tensor::new(vec![dim], scale)?)?;
    let head = ProbeHead { params };
    let train_right = features
        .iter()
        .zip(&labels)
        .filter(|(f, &l)| head.predict(f) == l)
        .count();

    let mut out = checkpoint.clone();
    out.probe = Some(head);
    out.set_meta("probe_train_samples", subset.len());
    out.set_meta(
        "probe_train_fraction",
        format!("{:?}", config.train_fraction),
    );
    out.set_meta("probe_epochs", config.probe_epochs);
    let metrics = config.install(|| evaluate(&out, &dataset.test))??;
    if let Some(acc) = metrics.cls_acc {
        out.set_meta("probe_test_acc", format!("{acc:?}"));
    }
    Ok(ProbeReport {
        checkpoint: out,
        metrics,
        train_samples: subset.len(),
        train_acc: train_right as f64 / subset.len() as f64,
    })
}
