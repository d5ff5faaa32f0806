use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};

/// Hyperparameters of SGD with momentum, weight decay and a cosine schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Length of the cosine schedule in optimizer steps.
    pub total_steps: usize,
}

/// Momentum buffers and step counter for one [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    config: SgdConfig,
    velocity: Vec<Tensor>,
    step: usize,
}

impl OptimizerState {
    pub fn new(config: SgdConfig, params: &ParamStore) -> Self {
        let velocity = params
            .ids()
            .map(|id| Tensor::zeros(params.value(id).shape()))
            .collect();
        Self {
            config,
            velocity,
            step: 0,
        }
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// `0.5 * base * (1 + cos(pi * t / T))`, with `t` saturating at `T`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let total = self.config.total_steps.max(1);
        let t = step.min(total) as f64;
        0.5 * self.config.base_lr * (1.0 + (PI * t / total as f64).cos())
    }

    pub fn current_lr(&self) -> f64 {
        self.lr_at(self.step)
    }
}

/// One SGD update: `v <- mu v + (g + wd p)`, `p <- p - lr(t) v`. Gradients
/// are zeroed afterwards.
pub fn sgd_step(params: &mut ParamStore, state: &mut OptimizerState) {
    let lr = state.current_lr();
    let SgdConfig {
        momentum,
        weight_decay,
        ..
    } = state.config;
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let grad = params.grad(id).data().to_vec();
        let vel = state.velocity[id.index()].data_mut();
        let value = params.value_mut(id).data_mut();
        for ((p, v), g) in value.iter_mut().zip(vel.iter_mut()).zip(&grad) {
            *v = momentum * *v + (g + weight_decay * *p);
            *p -= lr * *v;
        }
    }
    params.zero_grads();
    state.step += 1;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn config(lr: f64, momentum: f64, wd: f64, total: usize) -> SgdConfig {
        SgdConfig {
            base_lr: lr,
            momentum,
            weight_decay: wd,
            total_steps: total,
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::full(&[3], 0.7)).unwrap();
        let mut opt = OptimizerState::new(config(0.1, 0.0, 0.0, 10), &store);
        sgd_step(&mut store, &mut opt);
        assert_eq!(store.value(id).data(), &[0.7; 3]);
    }

    #[test]
    fn cosine_endpoints() {
        let store = ParamStore::new();
        let opt = OptimizerState::new(config(0.1, 0.9, 5e-4, 100), &store);
        assert_eq!(opt.lr_at(0), 0.1);
        assert!(opt.lr_at(100).abs() < 1e-15);
        assert!((opt.lr_at(50) - 0.05).abs() < 1e-15);
        for t in 0..100 {
            let lr = opt.lr_at(t);
            assert!(lr > 0.0 && lr <= 0.1);
        }
    }

    #[test]
    fn one_step_on_half_square() {
        // f(w) = w^2 / 2 at w = 1 has gradient 1; lr 0.1 gives 0.9.
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::scalar(1.0)).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let sq = tape.mul(w, w).unwrap();
        let half = tape.scale(sq, 0.5).unwrap();
        let loss = tape.sum(half).unwrap();
        crate::autodiff::backward(&tape, loss, &mut store).unwrap();
        let mut opt = OptimizerState::new(config(0.1, 0.0, 0.0, 1000), &store);
        sgd_step(&mut store, &mut opt);
        assert!((store.value(id).item() - 0.9).abs() < 1e-15);
        assert_eq!(store.grad(id).item(), 0.0);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn momentum_and_weight_decay() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::scalar(2.0)).unwrap();
        let mut opt = OptimizerState::new(config(0.5, 0.9, 0.1, 1_000_000), &store);
        store.grad_mut(id).data_mut()[0] = 1.0;
        sgd_step(&mut store, &mut opt);
        // v = 1 + 0.1*2 = 1.2; w = 2 - 0.5*1.2 = 1.4 (lr ~ base at t=0)
        assert!((store.value(id).item() - 1.4).abs() < 1e-12);
        store.grad_mut(id).data_mut()[0] = 1.0;
        let lr1 = opt.current_lr();
        sgd_step(&mut store, &mut opt);
        let v2 = 0.9 * 1.2 + 1.0 + 0.1 * 1.4;
        assert!((store.value(id).item() - (1.4 - lr1 * v2)).abs() < 1e-12);
    }

    #[test]
    fn trajectories_are_bitwise_reproducible() {
        let run = || {
            let mut store = ParamStore::new();
            let id = store
                .insert("w", Tensor::new(vec![2], vec![1.5, -0.3]).unwrap())
                .unwrap();
            let mut opt = OptimizerState::new(config(0.05, 0.9, 5e-4, 20), &store);
            let mut trace = Vec::new();
            for _ in 0..20 {
                let mut tape = Tape::new();
                let w = tape.param(&store, id);
                let e = tape.exp(w).unwrap();
                let l = tape.sum(e).unwrap();
                crate::autodiff::backward(&tape, l, &mut store).unwrap();
                sgd_step(&mut store, &mut opt);
                trace.extend(store.value(id).data().iter().map(|x| x.to_bits()));
            }
            trace
        };
        assert_eq!(run(), run());
    }
}
