//! Finite-difference verification of tape gradients.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{NumericsError, ParamSet, Tensor};

/// Worst relative error seen across all sampled coordinates.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat coordinate where the worst error occurred.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

/// Compares analytic gradients against central differences.
///
/// `loss_fn` must evaluate the loss at the current parameter values and
/// return it along with gradients by parameter name; the gradients are only
/// used from the first, unperturbed call. Up to `samples_per_param`
/// coordinates of every parameter are probed (all of them when the tensor is
/// small), drawn from a ChaCha20 stream seeded with `seed`. The relative
/// error at a coordinate is |a - n| / max(|a|, |n|, 1e-8).
pub fn grad_check<F>(
    params: &mut ParamSet,
    mut loss_fn: F,
    step: f64,
    samples_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport, NumericsError>
where
    F: FnMut(&ParamSet) -> Result<(f64, BTreeMap<String, Tensor>), NumericsError>,
{
    let (_, analytic) = loss_fn(params)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let names: Vec<String> = params.names().map(str::to_string).collect();

    let mut report = GradCheckReport { max_rel_err: 0.0, worst: None, coords_checked: 0 };
    for name in names {
        let len = params.get(&name)?.len();
        if len == 0 {
            continue;
        }
        let coords: Vec<usize> = if len <= samples_per_param {
            (0..len).collect()
        } else {
            let mut picked = BTreeSet::new();
            while picked.len() < samples_per_param {
                picked.insert(rng.random_range(0..len));
            }
            picked.into_iter().collect()
        };

        for coord in coords {
            let original = params.get(&name)?.data()[coord];
            params.get_mut(&name)?.data_mut()[coord] = original + step;
            let (loss_plus, _) = loss_fn(params)?;
            params.get_mut(&name)?.data_mut()[coord] = original - step;
            let (loss_minus, _) = loss_fn(params)?;
            params.get_mut(&name)?.data_mut()[coord] = original;

            let numeric = (loss_plus - loss_minus) / (2.0 * step);
            let a = analytic.get(&name).map_or(0.0, |g| g.data()[coord]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.coords_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), coord));
            }
        }
    }
    Ok(report)
}
