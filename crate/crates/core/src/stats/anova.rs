use serde::{Deserialize, Serialize};

use super::special::{f_sf, studentized_range_sf};
use crate::error::{HypeError, Result};
use crate::scalar::{mean, sum_sq_dev, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult<T = f64> {
    pub f_statistic: T,
    pub df_between: usize,
    pub df_within: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyPair<T = f64> {
    pub group_a: usize,
    pub group_b: usize,
    /// `mean(a) - mean(b)`.
    pub mean_diff: T,
    pub q_statistic: T,
    pub p_value: f64,
    pub significant_at_05: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyResult<T = f64> {
    pub pairs: Vec<TukeyPair<T>>,
}

impl<T: Scalar> TukeyResult<T> {
    pub fn pair(&self, a: usize, b: usize) -> Option<&TukeyPair<T>> {
        self.pairs.iter().find(|p| (p.group_a, p.group_b) == (a, b) || (p.group_a, p.group_b) == (b, a))
    }

    pub fn all_significant(&self) -> bool {
        self.pairs.iter().all(|p| p.significant_at_05)
    }
}

struct Decomposition<T> {
    means: Vec<T>,
    sizes: Vec<usize>,
    ss_between: T,
    ss_within: T,
    df_between: usize,
    df_within: usize,
}

fn decompose<T: Scalar, G: AsRef<[T]>>(groups: &[G]) -> Result<Decomposition<T>> {
    if groups.len() < 2 {
        return Err(HypeError::Input(format!("need at least two groups, got {}", groups.len())));
    }
    if let Some((i, g)) = groups.iter().enumerate().find(|(_, g)| g.as_ref().len() < 2) {
        return Err(HypeError::Input(format!(
            "group {i} has {} values; every group needs at least two",
            g.as_ref().len()
        )));
    }
    let means: Vec<T> = groups.iter().map(|g| mean(g.as_ref())).collect();
    let sizes: Vec<usize> = groups.iter().map(|g| g.as_ref().len()).collect();
    let total: usize = sizes.iter().sum();
    // Pairwise form of sum n_i (m_i - grand)^2. It has no grand mean to round,
    // so groups with bitwise-equal means give exactly zero.
    let mut ss_between = T::zero();
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            let d = means[i] - means[j];
            ss_between = ss_between + T::from_count(sizes[i] * sizes[j]) * d * d;
        }
    }
    ss_between = ss_between / T::from_count(total);
    let ss_within = groups.iter().zip(&means).map(|(g, &m)| sum_sq_dev(g.as_ref(), m)).sum();
    Ok(Decomposition {
        df_between: groups.len() - 1,
        df_within: total - groups.len(),
        means,
        sizes,
        ss_between,
        ss_within,
    })
}

/// Between/within decomposition; `F = 0, p = 1` when groups share one mean,
/// `F = inf, p = 0` when groups are internally constant but differ.
pub fn one_way_anova<T: Scalar, G: AsRef<[T]>>(groups: &[G]) -> Result<AnovaResult<T>> {
    let d = decompose(groups)?;
    let ms_between = d.ss_between / T::from_count(d.df_between);
    let ms_within = d.ss_within / T::from_count(d.df_within);
    let f = if ms_between == T::zero() {
        T::zero()
    } else if ms_within == T::zero() {
        T::infinity()
    } else {
        ms_between / ms_within
    };
    Ok(AnovaResult {
        f_statistic: f,
        df_between: d.df_between,
        df_within: d.df_within,
        p_value: f_sf(f.as_f64(), d.df_between as f64, d.df_within as f64),
    })
}

/// Tukey-Kramer pairwise comparisons on the pooled within-group variance.
pub fn tukey_hsd<T: Scalar, G: AsRef<[T]>>(groups: &[G]) -> Result<TukeyResult<T>> {
    let d = decompose(groups)?;
    let k = groups.len();
    let ms_within = d.ss_within / T::from_count(d.df_within);
    let half = T::lit(0.5);
    let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
    for a in 0..k {
        for b in (a + 1)..k {
            let diff = d.means[a] - d.means[b];
            let se = (ms_within * half * (T::one() / T::from_count(d.sizes[a]) + T::one() / T::from_count(d.sizes[b])))
                .sqrt();
            let q = if diff == T::zero() {
                T::zero()
            } else if se == T::zero() {
                T::infinity()
            } else {
                diff.abs() / se
            };
            let p = studentized_range_sf(q.as_f64(), k, d.df_within as f64);
            pairs.push(TukeyPair {
                group_a: a,
                group_b: b,
                mean_diff: diff,
                q_statistic: q,
                p_value: p,
                significant_at_05: p < 0.05,
            });
        }
    }
    Ok(TukeyResult { pairs })
}
