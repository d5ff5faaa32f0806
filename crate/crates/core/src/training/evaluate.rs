use rayon::prelude::*;

use crate::autodiff::{Tape, Tensor};
use crate::error::Result;
use crate::geometry::Sample;
use crate::model::{hop_hits, ForwardOptions};
use crate::partition::HopMatrix;

use super::pretrain::mean_accuracy;
use super::{Checkpoint, Metrics};

struct Eval {
    loss: f64,
    hits: Vec<(usize, usize)>,
    correct: Option<bool>,
}

/// Hop accuracy on `samples` as stored (no augmentation), plus
/// classification accuracy when the checkpoint carries a probe head.
pub fn evaluate(checkpoint: &Checkpoint, samples: &[Sample]) -> Result<Metrics> {
    let model = &checkpoint.model;
    let probe = checkpoint.probe.as_ref();
    let options = ForwardOptions {
        descriptor: probe.is_some(),
        ..ForwardOptions::default()
    };
    let evals = samples
        .par_iter()
        .map(|s| -> Result<Eval> {
            let (partition, hops) = model.ground_truth(&s.cloud)?;
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &s.cloud, &partition, &hops, &options)?;
            let correct = match (probe, out.descriptor, s.cloud.label) {
                (Some(head), Some(d), Some(label)) => {
                    Some(head.predict(tape.value(d).data()) == label)
                }
                _ => None,
            };
            Ok(Eval {
                loss: tape.value(out.loss).item(),
                hits: out.hop_hits(&tape, &hops),
                correct,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let layers = model.config().layers;
    let mut hits = vec![(0, 0); layers];
    let mut loss = 0.0;
    let (mut right, mut labeled) = (0usize, 0usize);
    for e in &evals {
        loss += e.loss;
        for (acc, &(c, t)) in hits.iter_mut().zip(&e.hits) {
            acc.0 += c;
            acc.1 += t;
        }
        if let Some(ok) = e.correct {
            labeled += 1;
            right += usize::from(ok);
        }
    }
    Ok(Metrics {
        hop_acc: mean_accuracy(&hits),
        hop_acc_per_layer: hits
            .iter()
            .map(|&(c, t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
            .collect(),
        cls_acc: (labeled > 0).then(|| right as f64 / labeled as f64),
        loss: loss / samples.len().max(1) as f64,
        loss_curve: Vec::new(),
        samples: samples.len(),
    })
}

/// Hop accuracy of per-layer logit tables against one cloud's ground truth.
pub fn hop_accuracy(logits: &[Tensor], hops: &HopMatrix) -> f64 {
    let hits: Vec<_> = logits.iter().map(|l| hop_hits(l, hops)).collect();
    mean_accuracy(&hits)
}
