use std::collections::HashMap;

use rand::Rng;

use super::{Tensor, TensorError};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Param {
    name: String,
    value: Tensor,
    grad: Tensor,
}

/// Named parameters with paired gradient accumulators.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<ParamId, TensorError> {
        if self.by_name.contains_key(name) {
            return Err(TensorError::DuplicateParam {
                name: name.to_string(),
            });
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    /// Uniform in `[-sqrt(1/fan_in), sqrt(1/fan_in)]`.
    pub fn insert_uniform<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId, TensorError> {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    /// Uniform in `[-sqrt(6/fan_in), sqrt(6/fan_in)]`, which keeps activation
    /// variance roughly constant through rectifier layers.
    pub fn insert_kaiming<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId, TensorError> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].grad
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Total number of scalar entries across all parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_are_unique() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(
            store.insert("w", Tensor::zeros(&[3])),
            Err(TensorError::DuplicateParam { .. })
        ));
    }

    #[test]
    fn grad_shape_tracks_value_shape() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::zeros(&[4, 3])).unwrap();
        assert_eq!(store.grad(id).shape(), &[4, 3]);
    }

    #[test]
    fn uniform_init_respects_bound_and_seed() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        let ia = a
            .insert_uniform("w", &[16, 16], 16, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap();
        b.insert_uniform("w", &[16, 16], 16, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap();
        assert_eq!(a, b);
        assert!(a.value(ia).data().iter().all(|x| x.abs() <= 0.25));
    }
}
