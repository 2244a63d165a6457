//! Central-difference verification of the analytic gradient.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::backward::{batch_loss, loss_and_grad, LabeledInput};
use crate::error::{Error, Result};
use crate::model::Parameters;

/// Parameters compared per check, at least.
pub const MIN_CHECKED: usize = 256;
/// Entries drawn from every tensor before the random fill.
const PER_TENSOR: usize = 8;
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Flat index of the worst parameter.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub n_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// `|a − g| / max(|a|, |g|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Flat parameter indices to check: a few from every tensor, then uniform
/// draws until at least [`MIN_CHECKED`] are selected.
pub fn check_indices(params: &Parameters<f64>, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = params.n_params();
    let mut chosen = std::collections::BTreeSet::new();
    let mut offset = 0;
    for t in params.tensors() {
        let k = PER_TENSOR.min(t.len());
        for i in index::sample(&mut rng, t.len(), k) {
            chosen.insert(offset + i);
        }
        offset += t.len();
    }
    let target = MIN_CHECKED.min(total);
    while chosen.len() < target {
        chosen.insert(index::sample(&mut rng, total, 1).index(0));
    }
    chosen.into_iter().collect()
}

/// Compares `analytic` against central differences of the loss on `sample`.
pub fn compare_gradient(
    params: &Parameters<f64>,
    sample: &LabeledInput<'_>,
    analytic: &Parameters<f64>,
    indices: &[usize],
    fd_epsilon: f64,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&fd_epsilon) {
        return Err(Error::Range(format!("fd_epsilon {fd_epsilon} outside [1e-7, 1e-3]")));
    }
    let batch = std::slice::from_ref(sample);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        n_checked: indices.len(),
    };
    for &i in indices {
        let theta = params.get_flat(i);
        probe.set_flat(i, theta + fd_epsilon);
        let up = batch_loss(&probe, batch)?;
        probe.set_flat(i, theta - fd_epsilon);
        let down = batch_loss(&probe, batch)?;
        probe.set_flat(i, theta);

        let numeric = (up - down) / (2.0 * fd_epsilon);
        let a = analytic.get_flat(i);
        let err = relative_error(a, numeric);
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

/// Max relative error between backpropagation and central differences
/// over a seeded subset of at least [`MIN_CHECKED`] parameters.
pub fn grad_check(
    params: &Parameters<f64>,
    sample: &LabeledInput<'_>,
    fd_epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, analytic) = loss_and_grad(params, std::slice::from_ref(sample))?;
    let indices = check_indices(params, seed);
    compare_gradient(params, sample, &analytic, &indices, fd_epsilon)
}
