//! Small estimators shared by the Monte Carlo checks.

use serde::{Deserialize, Serialize};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub n: usize,
}

/// Mean computed relative to the first sample, so that a sample of identical
/// values returns that value exactly.
pub fn shifted_mean(values: &[f64]) -> f64 {
    let Some(&v0) = values.first() else {
        return f64::NAN;
    };
    let acc: f64 = values.iter().map(|v| v - v0).sum();
    v0 + acc / values.len() as f64
}

/// Mean and its standard error. For the mean, the jackknife standard error
/// coincides with `s / sqrt(n)`; it is computed from the leave-one-out means
/// so the same routine serves smooth transforms of the mean.
pub fn mean_estimate(values: &[f64]) -> Estimate {
    jackknife_transform(values, |m| m)
}

/// Jackknife estimate of `f(E[V])` from samples of `V`.
///
/// The point estimate is `f(mean)`; the standard error is the jackknife
/// spread of `f` evaluated on the leave-one-out means.
pub fn jackknife_transform(values: &[f64], f: impl Fn(f64) -> f64) -> Estimate {
    let n = values.len();
    if n == 0 {
        return Estimate { value: f64::NAN, std_error: f64::NAN, n };
    }
    let mean = shifted_mean(values);
    let value = f(mean);
    if n == 1 {
        return Estimate { value, std_error: f64::INFINITY, n };
    }
    let v0 = values[0];
    let total: f64 = values.iter().map(|v| v - v0).sum();
    let nf = n as f64;
    let loo: Vec<f64> = values
        .iter()
        .map(|v| f(v0 + (total - (v - v0)) / (nf - 1.0)))
        .collect();
    let loo_mean = shifted_mean(&loo);
    let ss: f64 = loo.iter().map(|l| (l - loo_mean).powi(2)).sum();
    Estimate { value, std_error: ((nf - 1.0) / nf * ss).sqrt(), n }
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Share of the total contributed by the largest 0.1% of (nonnegative)
/// samples, at least one sample.
pub fn top_tail_share(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let k = ((values.len() as f64) * 1e-3).ceil().max(1.0) as usize;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted[..k].iter().sum::<f64>() / total
}

/// Threshold on [`top_tail_share`] above which an estimate is inconclusive.
pub const TAIL_SHARE_LIMIT: f64 = 0.5;

pub fn pooled_se(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len().min(y.len());
    let nf = n as f64;
    let mx = x[..n].iter().sum::<f64>() / nf;
    let my = y[..n].iter().sum::<f64>() / nf;
    let sxx: f64 = x[..n].iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x[..n].iter().zip(&y[..n]).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return LinearFit { slope: 0.0, intercept: my, slope_se: f64::INFINITY };
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if n > 2 {
        let rss: f64 = x[..n]
            .iter()
            .zip(&y[..n])
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        (rss / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    LinearFit { slope, intercept, slope_se }
}
