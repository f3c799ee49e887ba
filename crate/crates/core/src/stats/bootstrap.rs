use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HypeError, Result};
use crate::scalar::{mean, sum_sq_dev, Scalar};

pub const DEFAULT_RESAMPLE_SIZE: usize = 30;
pub const DEFAULT_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult<T = f64> {
    /// Mean of the resampled means.
    pub mean: T,
    /// Standard deviation of the resampled means.
    pub std: T,
    pub ci_low: T,
    pub ci_high: T,
    pub iterations: usize,
    pub resample_size: usize,
    pub seed: u64,
}

impl<T: Scalar> BootstrapResult<T> {
    pub fn width(&self) -> T {
        self.ci_high - self.ci_low
    }
}

/// Percentile bootstrap of the mean of per-evaluator scores.
///
/// Iteration `i` draws from its own ChaCha stream (`seed`, stream `i`), so the
/// result does not depend on how iterations are scheduled.
pub fn bootstrap_ci<T: Scalar>(
    scores: &[T],
    resample_size: usize,
    iterations: usize,
    seed: u64,
) -> Result<BootstrapResult<T>> {
    if scores.is_empty() {
        return Err(HypeError::Input("bootstrap needs at least one score".into()));
    }
    if resample_size == 0 {
        return Err(HypeError::Input("resample_size must be at least 1".into()));
    }
    if iterations == 0 {
        return Err(HypeError::Input("iterations must be at least 1".into()));
    }
    let n = scores.len();
    let size = T::from_count(resample_size);
    let mut means: Vec<T> = (0..iterations)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let total: T = (0..resample_size).map(|_| scores[rng.random_range(0..n)]).sum();
            total / size
        })
        .collect();
    let centre = mean(&means);
    let std = (sum_sq_dev(&means, centre) / T::from_count(iterations)).sqrt();
    means.sort_by(|a, b| a.partial_cmp(b).expect("finite bootstrap means"));
    Ok(BootstrapResult {
        mean: centre,
        std,
        ci_low: percentile(&means, 2.5),
        ci_high: percentile(&means, 97.5),
        iterations,
        resample_size,
        seed,
    })
}

/// Linearly interpolated percentile `q` (0..=100) of sorted data.
pub fn percentile<T: Scalar>(sorted: &[T], q: f64) -> T {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let rank = q.clamp(0.0, 100.0) / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = T::lit(rank - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
