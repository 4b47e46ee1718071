//! Sample statistics, two-sample Kolmogorov–Smirnov and small regressions.

use serde::Serialize;

use crate::error::{LevyxError, Result};

/// Minimum sample size accepted by [`ks_two_sample`].
pub const KS_MIN_SAMPLE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample KS statistic `sup_x |F_a(x) − F_b(x)|` with no size requirement.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Kolmogorov survival function `Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-17 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Classical two-sample KS test with the asymptotic p-value
/// (effective size `n m / (n + m)` with the Stephens correction).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.len() < KS_MIN_SAMPLE || b.len() < KS_MIN_SAMPLE {
        return Err(LevyxError::InsufficientSample { left: a.len(), right: b.len(), need: KS_MIN_SAMPLE });
    }
    let statistic = ks_statistic(a, b);
    let ne = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let sq = ne.sqrt();
    let p_value = kolmogorov_survival((sq + 0.12 + 0.11 / sq) * statistic);
    Ok(KsResult { statistic, p_value })
}

/// Two-sided 95% critical value of the two-sample KS statistic.
pub fn ks_critical_95(n: usize, m: usize) -> f64 {
    1.358 * ((n + m) as f64 / (n * m) as f64).sqrt()
}

/// Sample mean, unbiased variance and their standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub var: f64,
    pub mean_se: f64,
    pub var_se: f64,
}

pub fn moments(xs: &[f64]) -> Moments {
    let n = xs.len();
    if n == 0 {
        return Moments { n, mean: f64::NAN, var: f64::NAN, mean_se: f64::NAN, var_se: f64::NAN };
    }
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / nf;
    let var = if n > 1 { m2 * nf / (nf - 1.0) } else { 0.0 };
    Moments {
        n,
        mean,
        var,
        mean_se: (var / nf).sqrt(),
        var_se: ((m4 - m2 * m2).max(0.0) / nf).sqrt(),
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of a statistic from batch means over contiguous batches.
pub fn batch_se(values: &[f64], batches: usize, stat: impl Fn(&[f64]) -> f64) -> f64 {
    let size = values.len() / batches.max(1);
    if batches < 2 || size == 0 {
        return f64::NAN;
    }
    let est: Vec<f64> = (0..batches).map(|b| stat(&values[b * size..(b + 1) * size])).collect();
    (moments(&est).var / batches as f64).sqrt()
}

/// Ordinary least squares `y ≈ intercept + slope·x` with the coefficient of
/// determination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Some(LinearFit { slope, intercept, r_squared })
}

/// Least-squares slope of `ln y` against `ln x` over the points with `y > 0`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .unzip();
    linear_fit(&lx, &ly).map(|f| f.slope)
}
