//! Dense row-major f64 tensors. Rank 0 (empty shape) is a scalar.

use super::NumericsError;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor { shape: Vec::new(), data: vec![value] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor, NumericsError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(NumericsError::ShapeMismatch {
                context: "Tensor::from_vec",
                expected: shape.to_vec(),
                got: vec![data.len()],
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn vector(data: Vec<f64>) -> Tensor {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The value of a scalar (rank-0 or single-element) tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    /// FNV-1a over the raw little-endian bit pattern. Equal checksums across
    /// two snapshots certify that no element changed bitwise.
    pub fn bit_checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        for v in &self.data {
            for byte in v.to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        }
        hash
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor, NumericsError> {
        if axis >= self.shape.len().max(1) {
            return Err(NumericsError::ShapeMismatch {
                context: "softmax axis",
                expected: self.shape.clone(),
                got: vec![axis],
            });
        }
        if !self.is_finite() {
            return Err(NumericsError::NonFinite { context: "softmax input" });
        }
        if self.shape.is_empty() {
            return Ok(Tensor::scalar(1.0));
        }
        let axis_len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut out = self.clone();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| o * axis_len * inner + k * inner + i;
                let max = (0..axis_len).map(|k| self.data[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for k in 0..axis_len {
                    let e = (self.data[idx(k)] - max).exp();
                    out.data[idx(k)] = e;
                    sum += e;
                }
                for k in 0..axis_len {
                    out.data[idx(k)] /= sum;
                }
            }
        }
        Ok(out)
    }
}

/// Stable softmax of a plain slice; the single-vector case of
/// [`Tensor::softmax`] without the tensor wrapper.
pub fn softmax_slice(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// log(sum(exp(logits))) with max subtraction.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}
