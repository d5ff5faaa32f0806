//! CSV views of one forward pass. Only valid part pairs are written;
//! layers count from 1 and heads from 0, matching parameter names.

use std::fmt::Write as _;

use crate::autodiff::Tape;
use crate::partition::HopMatrix;

use super::layers::argmax_rows;
use super::ForwardOutput;

/// Columns `layer,head,i,j,alpha`.
pub fn attention_csv(tape: &Tape, out: &ForwardOutput, hops: &HopMatrix) -> String {
    let v = hops.num_parts();
    let mut csv = String::from("layer,head,i,j,alpha\n");
    for (l, layer) in out.layers.iter().enumerate() {
        let alpha = tape.value(layer.attention);
        let heads = alpha.dim(2);
        for h in 0..heads {
            for r in hops.valid_pairs() {
                let (i, j) = (r / v, r % v);
                let _ = writeln!(csv, "{},{h},{i},{j},{}", l + 1, alpha.at(&[i, j, h]));
            }
        }
    }
    csv
}

/// Columns `layer,i,j,argmax_hop,gt_hop`.
pub fn hop_csv(tape: &Tape, out: &ForwardOutput, hops: &HopMatrix) -> String {
    let v = hops.num_parts();
    let mut csv = String::from("layer,i,j,argmax_hop,gt_hop\n");
    for (l, layer) in out.layers.iter().enumerate() {
        let pred = argmax_rows(tape.value(layer.logits));
        for r in hops.valid_pairs() {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                l + 1,
                r / v,
                r % v,
                pred[r],
                hops.distances()[r]
            );
        }
    }
    csv
}
