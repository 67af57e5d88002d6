//! Small statistics toolbox for replica aggregation.
//!
//! Aggregates are computed in `f64` regardless of the kernel scalar.
//! Quantiles use linear interpolation on the order statistics; the
//! standard error of the mean is `sd/sqrt(R)`.

/// Summary of one batch of replica values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub stderr: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

impl Summary {
    pub fn from_values(values: &[f64]) -> Summary {
        assert!(!values.is_empty(), "summary of empty batch");
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let sd = var.sqrt();
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in replica values"));
        Summary {
            n,
            mean,
            sd,
            stderr: sd / (n as f64).sqrt(),
            q05: quantile_sorted(&sorted, 0.05),
            q50: quantile_sorted(&sorted, 0.50),
            q95: quantile_sorted(&sorted, 0.95),
        }
    }
}

/// Interpolated quantile of an already-sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    assert!((0.0..=1.0).contains(&q));
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Median of an unsorted slice.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    quantile_sorted(&sorted, 0.5)
}

/// Sample mean.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64
}

/// Standard error of the sample variance.
///
/// Uses the general (non-normal) formula with the fourth central moment:
/// `Var(s^2) = (m4 - (n-3)/(n-1) s^4)/n`.
pub fn variance_stderr(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let m = mean(values);
    let s2 = variance(values);
    let m4 = values.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    let var_s2 = (m4 - (n - 3.0) / (n - 1.0) * s2 * s2) / n;
    var_s2.max(0.0).sqrt()
}

/// Sample covariance together with its influence-function standard error.
///
/// The returned error is `sd(xy - x_bar*y - y_bar*x)/sqrt(n)`, the
/// delta-method uncertainty of the plug-in covariance estimator.
pub fn covariance_with_stderr(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let cov = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / n;
    let infl: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my) - cov)
        .collect();
    let vi = infl.iter().map(|v| v * v).sum::<f64>() / n;
    (cov, (vi / n).sqrt())
}

/// Ordinary least squares `y = a + b x`; returns `(intercept, slope, r2)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2);
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    assert!(sxx > 0.0, "degenerate x values in fit");
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (intercept, slope, r2)
}

/// Two-sample Kolmogorov–Smirnov test; returns `(statistic, p_value)`.
///
/// The p-value uses the asymptotic Kolmogorov distribution with the
/// effective sample size `n m / (n + m)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert!(!a.is_empty() && !b.is_empty());
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = xs[i].min(ys[j]);
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1.0f64).powi(k + 1) * (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_basics() {
        let s = Summary::from_values(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!((s.mean - 3.0).abs() < 1e-12);
        assert!((s.q50 - 3.0).abs() < 1e-12);
        assert!((s.sd - 2.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [0.0, 10.0];
        assert!((quantile_sorted(&v, 0.25) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 5.0, 7.0, 9.0];
        let (a, b, r2) = linear_fit(&x, &y);
        assert!((a - 1.0).abs() < 1e-12);
        assert!((b - 2.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ks_same_sample_high_p() {
        let a: Vec<f64> = (0..500).map(|i| (i as f64 * 0.7133).sin()).collect();
        let (d, p) = ks_two_sample(&a, &a);
        assert!(d < 1e-12);
        assert!(p > 0.99);
    }

    #[test]
    fn ks_distinguishes_shifted() {
        let a: Vec<f64> = (0..500).map(|i| i as f64 / 500.0).collect();
        let b: Vec<f64> = (0..500).map(|i| i as f64 / 500.0 + 0.5).collect();
        let (_, p) = ks_two_sample(&a, &b);
        assert!(p < 1e-6);
    }
}
