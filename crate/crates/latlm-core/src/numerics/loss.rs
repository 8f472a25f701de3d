//! Sparse target distributions and eager divergence measures.
//!
//! The tape has its own differentiable KL node; the functions here are the
//! plain-value versions used for reporting, perplexity, and cross-checking.

use super::tensor::log_sum_exp;
use super::NumericsError;

/// Sparse probability distribution over vocabulary ids, sorted by id.
/// Entries with the same id are merged by summing; zero-mass entries are
/// dropped. The total mass must be 1 within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    entries: Vec<(usize, f64)>,
}

impl Distribution {
    pub fn new(mut raw: Vec<(usize, f64)>) -> Result<Distribution, NumericsError> {
        for &(id, p) in &raw {
            if !(0.0..=1.0).contains(&p) {
                return Err(NumericsError::BadProbability { id, prob: p });
            }
        }
        raw.sort_by_key(|&(id, _)| id);
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(raw.len());
        for (id, p) in raw {
            match entries.last_mut() {
                Some((last_id, last_p)) if *last_id == id => *last_p += p,
                _ => entries.push((id, p)),
            }
        }
        entries.retain(|&(_, p)| p > 0.0);
        let sum: f64 = entries.iter().map(|&(_, p)| p).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(NumericsError::TargetNotNormalized { sum });
        }
        Ok(Distribution { entries })
    }

    /// One-hot mass on a single id.
    pub fn one_hot(id: usize) -> Distribution {
        Distribution { entries: vec![(id, 1.0)] }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prob(&self, id: usize) -> f64 {
        match self.entries.binary_search_by_key(&id, |&(i, _)| i) {
            Ok(pos) => self.entries[pos].1,
            Err(_) => 0.0,
        }
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.entries.iter().map(|&(_, p)| -p * p.ln()).sum()
    }
}

fn check_logits(target: &Distribution, logits: &[f64]) -> Result<(), NumericsError> {
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(NumericsError::NonFinite { context: "logits" });
    }
    if let Some(&(id, _)) = target.entries().iter().find(|&&(id, _)| id >= logits.len()) {
        return Err(NumericsError::ShapeMismatch {
            context: "target id out of logit range",
            expected: vec![logits.len()],
            got: vec![id],
        });
    }
    Ok(())
}

/// `sum_i t_i * (-ln softmax(z)_i)`, in nats.
pub fn cross_entropy(target: &Distribution, logits: &[f64]) -> Result<f64, NumericsError> {
    check_logits(target, logits)?;
    let lse = log_sum_exp(logits);
    Ok(target.entries().iter().map(|&(id, p)| p * (lse - logits[id])).sum())
}

/// `KL(target || softmax(logits))`, in nats, clamped to be non-negative.
pub fn kl_divergence(target: &Distribution, logits: &[f64]) -> Result<f64, NumericsError> {
    let ce = cross_entropy(target, logits)?;
    Ok((ce - target.entropy()).max(0.0))
}
