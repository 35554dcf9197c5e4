//! Wasserstein-1 distances between empirical laws.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::{stream, tag};
use crate::stats::{sorted, standard_normal_cdf, standard_normal_quantile};
pub use crate::stats::wasserstein1;

/// Column `k` of row-major samples.
fn column(rows: &[Vec<f64>], k: usize) -> Vec<f64> {
    rows.iter().map(|r| r[k]).collect()
}

/// W₁ of each coordinate marginal.
pub fn coordinate_w1(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
    let d = a.first().map_or(0, Vec::len);
    (0..d).map(|k| wasserstein1(&column(a, k), &column(b, k))).collect()
}

/// Mean of the one-dimensional W₁ over `n_proj` uniform random directions
/// drawn from the `(seed, PROJECTIONS)` stream.
pub fn sliced_w1(a: &[Vec<f64>], b: &[Vec<f64>], n_proj: usize, seed: u64) -> f64 {
    let d = a.first().map_or(0, Vec::len);
    if d == 1 {
        return wasserstein1(&column(a, 0), &column(b, 0));
    }
    let mut rng = stream(seed, tag::PROJECTIONS, 0);
    let mut total = 0.0;
    for _ in 0..n_proj {
        let mut theta: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
        theta.iter_mut().for_each(|v| *v /= norm);
        let project = |rows: &[Vec<f64>]| -> Vec<f64> {
            rows.iter().map(|r| r.iter().zip(&theta).map(|(x, t)| x * t).sum()).collect()
        };
        total += wasserstein1(&project(a), &project(b));
    }
    total / n_proj as f64
}

/// Exact W₁ between the empirical law of `samples` and the law of
/// `x0·exp(σZ)`, `Z ~ N(0, 1)`, through the quantile coupling.
pub fn lognormal_w1(samples: &[f64], x0: f64, sigma: f64) -> f64 {
    if x0 < 0.0 {
        let flipped: Vec<f64> = samples.iter().map(|s| -s).collect();
        return lognormal_w1(&flipped, -x0, sigma);
    }
    if sigma == 0.0 || x0 == 0.0 {
        return samples.iter().map(|s| (s - x0).abs()).sum::<f64>() / samples.len() as f64;
    }
    let s = sorted(samples);
    let n = s.len() as f64;
    let scale = x0 * (0.5 * sigma * sigma).exp();
    // ∫₀^u Q = scale · P(u).
    let p = |u: f64| -> f64 {
        if u <= 0.0 {
            0.0
        } else if u >= 1.0 {
            1.0
        } else {
            standard_normal_cdf(standard_normal_quantile(u) - sigma)
        }
    };
    let mut total = 0.0;
    for (i, &v) in s.iter().enumerate() {
        let (a, b) = (i as f64 / n, (i + 1) as f64 / n);
        let cross = if v <= 0.0 { a } else { standard_normal_cdf((v / x0).ln() / sigma).clamp(a, b) };
        let (pa, pc, pb) = (p(a), p(cross), p(b));
        total += v * (cross - a) - scale * (pc - pa) + scale * (pb - pc) - v * (b - cross);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn quantile_samples_are_close_to_lognormal() {
        let n = 20000;
        let (x0, sigma) = (1.5, 0.8);
        let xs: Vec<f64> =
            (0..n).map(|i| x0 * (sigma * standard_normal_quantile((i as f64 + 0.5) / n as f64)).exp()).collect();
        assert!(lognormal_w1(&xs, x0, sigma) < 2e-3);
        let shifted: Vec<f64> = xs.iter().map(|x| x + 0.1).collect();
        assert!((lognormal_w1(&shifted, x0, sigma) - 0.1).abs() < 2e-3);
    }

    #[test]
    fn lognormal_point_mass_limit() {
        assert_eq!(lognormal_w1(&[1.0, 3.0], 2.0, 0.0), 1.0);
        let neg = lognormal_w1(&[-1.0, -1.2], -1.0, 0.3);
        let pos = lognormal_w1(&[1.0, 1.2], 1.0, 0.3);
        assert!((neg - pos).abs() < 1e-15);
    }

    #[test]
    fn sliced_of_identical_samples_is_zero() {
        let a = vec![vec![0.0, 1.0], vec![2.0, -1.0], vec![0.5, 0.5]];
        assert_eq!(sliced_w1(&a, &a, 64, 3), 0.0);
        assert_eq!(coordinate_w1(&a, &a), vec![0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn shift_gives_exact_distance(xs in prop::collection::vec(-5.0..5.0f64, 1..60), c in -3.0..3.0f64) {
            let ys: Vec<f64> = xs.iter().map(|x| x + c).collect();
            prop_assert!((wasserstein1(&xs, &ys) - c.abs()).abs() < 1e-12);
            prop_assert_eq!(wasserstein1(&xs, &xs), 0.0);
        }

        #[test]
        fn sliced_shift_is_mean_projection(c0 in -2.0..2.0f64, c1 in -2.0..2.0f64) {
            let a: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i % 7) as f64]).collect();
            let b: Vec<Vec<f64>> = a.iter().map(|r| vec![r[0] + c0, r[1] + c1]).collect();
            let w = sliced_w1(&a, &b, 64, 11);
            let mut rng = stream(11, tag::PROJECTIONS, 0);
            let expected = (0..64)
                .map(|_| {
                    let (t0, t1): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                    (t0 * c0 + t1 * c1).abs() / t0.hypot(t1)
                })
                .sum::<f64>()
                / 64.0;
            prop_assert!((w - expected).abs() < 1e-9);
        }
    }
}
