use serde::{Deserialize, Serialize};

use super::special::t_two_sided;
use crate::error::{HypeError, Result};
use crate::scalar::{mean, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult<T = f64> {
    pub rho: T,
    /// Two-sided, from the t approximation on `n - 2` degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

/// 1-based ranks with ties sharing the average of the ranks they span.
pub fn average_ranks<T: Scalar>(xs: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("rank input must not contain NaN"));
    let mut ranks = vec![T::zero(); xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share rank (i + j) / 2 + 1.
        let shared = T::from_count(i + j + 2) / T::lit(2.0);
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Option<T> {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        sxy = sxy + (a - mx) * (b - my);
        sxx = sxx + (a - mx) * (a - mx);
        syy = syy + (b - my) * (b - my);
    }
    if sxx == T::zero() || syy == T::zero() {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).max(-T::one()).min(T::one()))
}

pub fn spearman<T: Scalar>(x: &[T], y: &[T]) -> Result<SpearmanResult<T>> {
    if x.len() != y.len() {
        return Err(HypeError::Input(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(HypeError::Input(format!("spearman needs at least 3 pairs, got {n}")));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(HypeError::Input("NaN in rank correlation input".into()));
    }
    let rho = pearson(&average_ranks(x), &average_ranks(y))
        .ok_or_else(|| HypeError::Undefined("rank correlation of a constant input".into()))?;
    let r = rho.as_f64();
    let df = (n - 2) as f64;
    let p_value = if r.abs() >= 1.0 { 0.0 } else { t_two_sided(r * (df / (1.0 - r * r)).sqrt(), df) };
    Ok(SpearmanResult { rho, p_value, n })
}
