use serde::{Deserialize, Serialize};

use super::special::t_two_sided;
use crate::error::{HypeError, Result};
use crate::scalar::{mean, sum_sq_dev, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult<T = f64> {
    pub t_statistic: T,
    pub df: usize,
    /// Two-sided.
    pub p_value: f64,
    /// Both samples have zero variance but different means; `t` is infinite.
    pub degenerate: bool,
}

/// Pooled-variance two-sample Student t-test.
pub fn t_test_unpaired<T: Scalar>(a: &[T], b: &[T]) -> Result<TTestResult<T>> {
    if a.len() < 2 || b.len() < 2 {
        return Err(HypeError::Input(format!(
            "t-test needs at least two values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, mb) = (mean(a), mean(b));
    let df = a.len() + b.len() - 2;
    let pooled = (sum_sq_dev(a, ma) + sum_sq_dev(b, mb)) / T::from_count(df);
    let diff = ma - mb;
    if pooled == T::zero() {
        if diff == T::zero() {
            return Ok(TTestResult { t_statistic: T::zero(), df, p_value: 1.0, degenerate: false });
        }
        let t = if diff > T::zero() { T::infinity() } else { T::neg_infinity() };
        return Ok(TTestResult { t_statistic: t, df, p_value: 0.0, degenerate: true });
    }
    let se = (pooled * (T::one() / T::from_count(a.len()) + T::one() / T::from_count(b.len()))).sqrt();
    let t = diff / se;
    Ok(TTestResult { t_statistic: t, df, p_value: t_two_sided(t.as_f64(), df as f64), degenerate: false })
}
