//! Sample statistics, regression, goodness-of-fit and Wasserstein distances.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Standard error of the sample mean.
pub fn se_mean(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Sample variance together with its standard error `sqrt((m4 - s^4)/n)`.
pub fn variance_with_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = mean(xs);
    let v = variance(xs);
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    (v, ((m4 - v * v).max(0.0) / n).sqrt())
}

/// Sample mean of `x*y` (no centring) and its standard error.
pub fn cross_moment_with_se(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let prod: Vec<f64> = xs.iter().zip(ys).map(|(a, b)| a * b).collect();
    (mean(&prod), se_mean(&prod))
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Linear interpolation quantile of already sorted data, `q` in [0, 1].
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(xs: &[f64]) -> f64 {
    quantile_sorted(&sorted(xs), 0.5)
}

pub fn iqr(xs: &[f64]) -> f64 {
    let s = sorted(xs);
    quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25)
}

/// Ordinary least squares fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// 95% normal-approximation interval for the slope.
    pub slope_ci: (f64, f64),
    pub n: usize,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len();
    let (mx, my) = (mean(xs), mean(ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let slope_se = if n > 2 { (rss / (n - 2) as f64 / sxx).sqrt() } else { 0.0 };
    LinearFit {
        slope,
        intercept,
        slope_se,
        slope_ci: (slope - 1.96 * slope_se, slope + 1.96 * slope_se),
        n,
    }
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn standard_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Kolmogorov distribution tail `P(K > lambda)`.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let term = (-2.0 * (j as f64 * lambda).powi(2)).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF, with the
/// Stephens small-sample correction on the asymptotic p-value.
pub fn ks_one_sample<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> KsResult {
    let s = sorted(xs);
    let n = s.len();
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / nf - f).max(f - i as f64 / nf);
    }
    let sq = nf.sqrt();
    KsResult { statistic: d, p_value: kolmogorov_tail((sq + 0.12 + 0.11 / sq) * d), n }
}

/// Wasserstein-1 distance between two empirical laws on the line.
///
/// Equal sample sizes use the sorted (monotone) coupling directly; unequal
/// sizes integrate `|F_n - G_m|` over the merged support.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> f64 {
    let sa = sorted(a);
    let sb = sorted(b);
    if sa.len() == sb.len() {
        return sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / sa.len() as f64;
    }
    let (n, m) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = sa[0].min(sb[0]);
    let mut total = 0.0;
    while i < sa.len() || j < sb.len() {
        let next = match (sa.get(i), sb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        total += (i as f64 / n - j as f64 / m).abs() * (next - prev);
        while i < sa.len() && sa[i] <= next {
            i += 1;
        }
        while j < sb.len() && sb[j] <= next {
            j += 1;
        }
        prev = next;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn regression_recovers_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let fit = linear_fit(&xs, &ys);
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ks_accepts_uniform_grid_against_its_cdf() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let r = ks_one_sample(&xs, |x| x.clamp(0.0, 1.0));
        assert!(r.statistic <= 0.0005 + 1e-12);
        assert!(r.p_value > 0.99);
    }

    #[test]
    fn ks_rejects_shifted_sample() {
        let xs: Vec<f64> = (0..2000).map(|i| standard_normal_quantile((i as f64 + 0.5) / 2000.0) + 0.3).collect();
        assert!(ks_one_sample(&xs, standard_normal_cdf).p_value < 1e-6);
    }

    #[test]
    fn wasserstein_unequal_sizes_matches_hand_value() {
        // Point masses {0} vs {1, 1}: distance 1.
        assert!((wasserstein1(&[0.0], &[1.0, 1.0]) - 1.0).abs() < 1e-15);
        // {0, 2} vs {1}: each half of the mass moves by 1.
        assert!((wasserstein1(&[0.0, 2.0], &[1.0]) - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn wasserstein_identity_and_shift(xs in prop::collection::vec(-100.0f64..100.0, 1..64), c in -10.0f64..10.0) {
            prop_assert_eq!(wasserstein1(&xs, &xs), 0.0);
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            prop_assert!((wasserstein1(&xs, &shifted) - c.abs()).abs() <= 1e-12 * (1.0 + c.abs()) * 100.0);
        }
    }
}
