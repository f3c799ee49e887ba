//! Distribution tails used for p-values.
//!
//! The F and Student tails reduce to the regularized incomplete beta
//! function (continued-fraction evaluation from `statrs`). The studentized
//! range has no closed form; its CDF is integrated numerically below.

use std::sync::OnceLock;

use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

/// `P[F > f]` for an F distribution with `(df1, df2)` degrees of freedom.
pub fn f_sf(f: f64, df1: f64, df2: f64) -> f64 {
    if f.is_nan() {
        return f64::NAN;
    }
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    beta_reg(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f)).clamp(0.0, 1.0)
}

/// Two-sided `P[|T| > |t|]` for Student's t with `df` degrees of freedom.
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    if t == 0.0 {
        return 1.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

const GL_POINTS: usize = 20;

/// Gauss-Legendre nodes and weights on [-1, 1], found by Newton iteration.
fn gauss_legendre() -> &'static [(f64, f64)] {
    static NODES: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    NODES.get_or_init(|| {
        let n = GL_POINTS;
        let mut out = Vec::with_capacity(n);
        for i in 1..=n {
            let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
        }
        out
    })
}

/// Composite Gauss-Legendre quadrature of `f` over `[a, b]` with `panels` equal panels.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let nodes = gauss_legendre();
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + h * (p as f64 + 0.5);
        let half = 0.5 * h;
        total += nodes.iter().map(|&(x, w)| w * f(mid + half * x)).sum::<f64>() * half;
    }
    total
}

/// CDF of the range of `k` independent standard normals.
fn normal_range_cdf(w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let k_f = k as f64;
    let inner = |z: f64| {
        let d = normal_cdf(z) - normal_cdf(z - w);
        if d <= 0.0 {
            0.0
        } else {
            normal_pdf(z) * d.powi(k as i32 - 1)
        }
    };
    // The integrand lives where phi(z) is non-negligible and z - w is not far below it.
    let lo = -8.5;
    let hi = 8.5;
    (k_f * integrate(inner, lo, hi, 8)).clamp(0.0, 1.0)
}

/// `P[Q <= q]` for the studentized range with `k` groups and `df` error degrees of freedom.
///
/// Integrates the normal-range CDF against the density of `s = sqrt(chi2_df / df)`.
pub fn studentized_range_cdf(q: f64, k: usize, df: f64) -> f64 {
    if q.is_nan() {
        return f64::NAN;
    }
    if q <= 0.0 {
        return 0.0;
    }
    if q.is_infinite() {
        return 1.0;
    }
    if k < 2 {
        return 1.0;
    }
    if df > 1e5 {
        return normal_range_cdf(q, k);
    }
    let half = df / 2.0;
    let log_norm = half * df.ln() - ln_gamma(half) - (half - 1.0) * std::f64::consts::LN_2;
    let density = |s: f64| {
        if s <= 0.0 {
            return 0.0;
        }
        (log_norm + (df - 1.0) * s.ln() - half * s * s).exp()
    };
    let spread = (2.0 * df).sqrt();
    let s_hi = ((df + 15.0 * spread + 60.0) / df).sqrt();
    let s_lo = ((df - 15.0 * spread).max(0.0) / df).sqrt();
    let p = integrate(|s| density(s) * normal_range_cdf(q * s, k), s_lo, s_hi, 16);
    p.clamp(0.0, 1.0)
}

pub fn studentized_range_sf(q: f64, k: usize, df: f64) -> f64 {
    (1.0 - studentized_range_cdf(q, k, df)).clamp(0.0, 1.0)
}
