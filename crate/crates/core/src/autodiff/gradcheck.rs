use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParamStore, Tape, TensorError, Var};

/// Which parameter coordinates to probe.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coordinates {
    All,
    /// At most this many coordinates per parameter, chosen with the seed.
    Sampled {
        per_param: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares reverse-mode gradients with central differences.
///
/// The relative error of one coordinate is
/// `|analytic - numeric| / max(1, |numeric|)`; the report carries the max.
/// Perturbed evaluations replay the discrete choices of the unperturbed
/// one (see [`Tape::replaying`]), so a step that would cross a max or
/// rectifier kink still measures the piece the analytic gradient lives on.
pub fn grad_check<F, E>(
    params: &ParamStore,
    eps: f64,
    coords: Coordinates,
    loss_fn: F,
) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut tape = Tape::recording();
    let root = loss_fn(&mut tape, params)?;
    let grads = tape.backward(root)?;
    let branches = tape.branches().expect("recording tape");

    let eval = |store: &ParamStore| -> Result<f64, E> {
        let mut tape = Tape::replaying(branches.clone());
        let root = loss_fn(&mut tape, store)?;
        let value = tape.value(root).item();
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "loss" }.into());
        }
        Ok(value)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(match coords {
        Coordinates::All => 0,
        Coordinates::Sampled { seed, .. } => seed,
    });
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        let n = params.value(id).numel();
        let indices: Vec<usize> = match coords {
            Coordinates::All => (0..n).collect(),
            Coordinates::Sampled { per_param, .. } if per_param >= n => (0..n).collect(),
            Coordinates::Sampled { per_param, .. } => {
                let mut picked = sample(&mut rng, n, per_param).into_vec();
                picked.sort_unstable();
                picked
            }
        };
        for idx in indices {
            let original = params.value(id).data()[idx];
            probe.value_mut(id).data_mut()[idx] = original + eps;
            let plus = eval(&probe)?;
            probe.value_mut(id).data_mut()[idx] = original - eps;
            let minus = eval(&probe)?;
            probe.value_mut(id).data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.param(id).map_or(0.0, |g| g.data()[idx]);
            let rel = (analytic - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = params.name(id).to_string();
                report.worst_index = idx;
            }
        }
    }
    Ok(report)
}
