//! Named parameter tensors with paired gradient accumulators.

use std::collections::BTreeMap;

use rand_chacha::ChaCha20Rng;

use super::{NumericsError, Tensor};

#[derive(Debug, Clone)]
struct Param {
    value: Tensor,
    grad: Tensor,
}

/// A map from dot-separated parameter paths to tensors, each with a
/// same-shaped gradient accumulator. Iteration order is the sorted name
/// order, which keeps serialization and optimizer traversal deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: BTreeMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<(), NumericsError> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(NumericsError::DuplicateParam { name });
        }
        let grad = Tensor::zeros(value.shape());
        self.params.insert(name, Param { value, grad });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NumericsError> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| NumericsError::UnknownParam { name: name.to_string() })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, NumericsError> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| NumericsError::UnknownParam { name: name.to_string() })
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor, NumericsError> {
        self.params
            .get(name)
            .map(|p| &p.grad)
            .ok_or_else(|| NumericsError::UnknownParam { name: name.to_string() })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(name, p)| (name.as_str(), &p.value))
    }

    /// Adds `delta` into the gradient accumulator of `name`.
    pub fn accumulate_grad(&mut self, name: &str, delta: &Tensor) -> Result<(), NumericsError> {
        let param = self
            .params
            .get_mut(name)
            .ok_or_else(|| NumericsError::UnknownParam { name: name.to_string() })?;
        if param.grad.shape() != delta.shape() {
            return Err(NumericsError::ShapeMismatch {
                context: "accumulate_grad",
                expected: param.grad.shape().to_vec(),
                got: delta.shape().to_vec(),
            });
        }
        for (g, d) in param.grad.data_mut().iter_mut().zip(delta.data()) {
            *g += d;
        }
        Ok(())
    }

    /// Scales every gradient accumulator, e.g. by 1/batch before a step.
    pub fn scale_grads(&mut self, factor: f64) {
        for p in self.params.values_mut() {
            for g in p.grad.data_mut() {
                *g *= factor;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Applies `f(value, grad)` to every parameter, in name order.
    pub(crate) fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor, &mut Tensor)) {
        for (name, p) in self.params.iter_mut() {
            f(name, &mut p.value, &mut p.grad);
        }
    }

    /// Bitwise checksums of every parameter value, in name order.
    pub fn bit_checksums(&self) -> Vec<(String, u64)> {
        self.iter().map(|(name, t)| (name.to_string(), t.bit_checksum())).collect()
    }

    /// The parameters whose names start with `prefix`, as a new set.
    pub fn subset(&self, prefix: &str) -> ParamSet {
        let params = self
            .params
            .iter()
            .filter(|(name, _)| name.starts_with(prefix))
            .map(|(name, p)| (name.clone(), p.clone()))
            .collect();
        ParamSet { params }
    }

    /// Moves every parameter of `other` into `self`.
    pub fn absorb(&mut self, other: ParamSet) -> Result<(), NumericsError> {
        for (name, p) in other.params {
            if self.params.contains_key(&name) {
                return Err(NumericsError::DuplicateParam { name });
            }
            self.params.insert(name, p);
        }
        Ok(())
    }
}

/// Deterministic initializers; all draws come from the caller's seeded RNG.
pub mod init {
    use rand::Rng;

    use super::{ChaCha20Rng, Tensor};

    /// Uniform(-limit, limit) with the Glorot limit sqrt(6 / (fan_in + fan_out)).
    pub fn glorot(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Tensor {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        uniform(rng, &[rows, cols], -limit, limit)
    }

    pub fn uniform(rng: &mut ChaCha20Rng, shape: &[usize], low: f64, high: f64) -> Tensor {
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rng.random_range(low..high)).collect();
        Tensor::from_vec(shape, data).expect("length matches shape product")
    }
}
