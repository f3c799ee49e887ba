use serde::{Deserialize, Serialize};

use crate::error::{HypeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialTail {
    pub n: u64,
    pub k: u64,
    pub p: f64,
    /// `P[X >= k]` for `X ~ Binomial(n, p)`.
    pub tail_probability: f64,
}

/// Exact upper tail by summing the pmf.
///
/// The pmf is built by the ratio recurrence outward from the mode, starting
/// from an unnormalized 1, and divided by its own total at the end. No
/// factorials or log-gamma terms are involved, so the upper and lower tails
/// sum to one up to rounding.
pub fn binomial_tail(n: u64, k: u64, p: f64) -> Result<BinomialTail> {
    if k > n {
        return Err(HypeError::Input(format!("k = {k} exceeds n = {n}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(HypeError::Input(format!("p = {p} is not a probability")));
    }
    let tail_probability = if k == 0 {
        1.0
    } else if p == 0.0 {
        0.0
    } else if p == 1.0 {
        1.0
    } else {
        let weights = unnormalized_pmf(n, p);
        let total: f64 = weights.iter().sum();
        let upper: f64 = weights[k as usize..].iter().rev().sum();
        (upper / total).clamp(0.0, 1.0)
    };
    Ok(BinomialTail { n, k, p, tail_probability })
}

fn unnormalized_pmf(n: u64, p: f64) -> Vec<f64> {
    let odds = p / (1.0 - p);
    let mode = (((n + 1) as f64) * p).floor().min(n as f64) as usize;
    let n_us = n as usize;
    let mut w = vec![0.0; n_us + 1];
    w[mode] = 1.0;
    // pmf(i + 1) / pmf(i) = (n - i) / (i + 1) * p / (1 - p)
    for i in mode..n_us {
        w[i + 1] = w[i] * ((n_us - i) as f64 / (i + 1) as f64) * odds;
    }
    for i in (0..mode).rev() {
        w[i] = w[i + 1] * ((i + 1) as f64 / (n_us - i) as f64) / odds;
    }
    w
}
