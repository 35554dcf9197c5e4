//! Plumbing shared by the experiments.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use super::config::{Channel, ExperimentConfig};
use super::source::{FastSource, Noise};
use super::LabError;
use crate::hermite::scaling_alpha;
use crate::noise::{memory_loss_integral, TailVerdict, TimeGrid};
use crate::rng::{derive_seed, stream, tag};
use crate::roughpath::SlowGrid;
use crate::stats::{linear_fit, quantile_sorted, sorted};

pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> LabError {
    LabError::ConfigInvalid { field: field.into(), reason: reason.into() }
}

pub(crate) struct Setup {
    pub noise: Noise,
    pub channels: Vec<Channel>,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, LabError> {
        cfg.validate()?;
        Ok(Self { noise: Noise::from_spec(&cfg.noise, cfg.grid.fast_step)?, channels: cfg.channels()? })
    }

    /// `α_k(ε)`: the long-memory scaling for Gaussian noise, `ε^{−½}` otherwise.
    pub fn alphas(&self, epsilon: f64) -> Vec<f64> {
        self.channels
            .iter()
            .map(|c| self.noise.h_star(c).map_or(epsilon.powf(-0.5), |hs| scaling_alpha(epsilon, hs)))
            .collect()
    }

    pub fn is_degenerate(&self, k: usize) -> bool {
        self.channels[k].observable.is_zero()
    }
}

/// Fast and slow grids for one `ε`.
pub(crate) struct Plan {
    pub epsilon: f64,
    pub step: f64,
    pub fast: TimeGrid,
    pub slow: SlowGrid,
}

impl Plan {
    /// Slow grid with the smallest stride leaving at most `max_slow` cells.
    pub fn new(cfg: &ExperimentConfig, epsilon: f64, max_slow: usize) -> Result<Self, LabError> {
        let step = cfg.grid.fast_step;
        let whole = SlowGrid::new(step, epsilon, cfg.t_max, 1).map_err(|e| invalid("epsilons", e.to_string()))?;
        let cells = whole.fast_cells;
        let stride = (1..=cells).find(|s| cells % s == 0 && cells / s <= max_slow.max(1)).unwrap_or(cells);
        let slow = SlowGrid::new(step, epsilon, cfg.t_max, stride)?;
        Ok(Self { epsilon, step, fast: TimeGrid::new(step, cells + 1)?, slow })
    }

    /// Fast-grid index of slow time `t`.
    pub fn node(&self, t: f64, t_max: f64) -> Result<usize, LabError> {
        let raw = self.slow.fast_cells as f64 * t / t_max;
        let n = raw.round() as usize;
        if (raw - n as f64).abs() > 1e-6 * raw.max(1.0) {
            return Err(invalid("t_max", format!("time {t} does not fall on the fast grid at epsilon {}", self.epsilon)));
        }
        Ok(n)
    }
}

pub(crate) fn epsilon_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, 0x100 + index as u64)
}

/// `X^{k,ε}` at the fast-grid `nodes`, trapezoidal in fast time, for every
/// channel of one fast path: `out[k][j]`.
pub(crate) fn functional_at_nodes(
    fast: &[f64],
    channels: &[Channel],
    weights: &[f64],
    nodes: &[usize],
) -> Vec<Vec<f64>> {
    let last = nodes.iter().copied().max().unwrap_or(0);
    channels
        .iter()
        .zip(weights)
        .map(|(ch, &w)| {
            let mut out = vec![0.0; nodes.len()];
            let mut acc = 0.0;
            let mut prev = ch.observable.eval(fast[0]);
            let mut at = vec![0.0; last + 1];
            for n in 1..=last {
                let cur = ch.observable.eval(fast[n]);
                acc += 0.5 * w * (prev + cur);
                prev = cur;
                at[n] = acc;
            }
            for (o, &n) in out.iter_mut().zip(nodes) {
                *o = at[n];
            }
            out
        })
        .collect()
}

/// `X^{k,ε}` on the slow grid (`count × d`), evaluating the observables directly.
pub(crate) fn slow_path(fast: &[f64], channels: &[Channel], weights: &[f64], slow: &SlowGrid) -> Array2<f64> {
    let nodes: Vec<usize> = (0..slow.grid.count()).map(|i| i * slow.stride).collect();
    let vals = functional_at_nodes(fast, channels, weights, &nodes);
    Array2::from_shape_fn((nodes.len(), channels.len()), |(i, k)| vals[k][i])
}

/// Values at `nodes` for paths `0..n_paths`: `out[path][channel][node]`.
pub(crate) fn sample_nodes(
    setup: &Setup,
    plan: &Plan,
    nodes: &[usize],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Vec<Vec<f64>>>, LabError> {
    let src: FastSource = setup.noise.source(plan.fast)?;
    let weights: Vec<f64> = setup.alphas(plan.epsilon).iter().map(|a| a * plan.epsilon * plan.step).collect();
    Ok((0..n_paths)
        .into_par_iter()
        .map(|i| functional_at_nodes(&src.path(seed, i as u64), &setup.channels, &weights, nodes))
        .collect())
}

/// Exact variance of `w·trapz(G(y_0), …, G(y_n))` from the lag covariances
/// `cov[ℓ]`, `ℓ = 0..=n`.
pub(crate) fn trapezoid_variance(cov: &[f64], n: usize, w: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let mut s = (nf - 0.5) * cov[0] + 2.0 * 0.25 * cov[n];
    for (l, c) in cov.iter().enumerate().take(n).skip(1) {
        s += 2.0 * (nf - l as f64) * c;
    }
    w * w * s
}

/// Fisher z statistic of a sample correlation over `n` pairs.
pub(crate) fn fisher_z(r: f64, n: usize) -> f64 {
    r.clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh() * ((n as f64) - 3.0).max(1.0).sqrt()
}

/// Percentile 95% interval of `stat` over `reps` resamples of `0..n` with replacement.
pub(crate) fn bootstrap_ci(n: usize, reps: usize, seed: u64, stat: impl Fn(&[usize]) -> f64 + Sync) -> (f64, f64) {
    if reps == 0 || n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let draws: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, tag::BOOTSTRAP, b as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            stat(&idx)
        })
        .collect();
    let s = sorted(&draws);
    (quantile_sorted(&s, 0.025), quantile_sorted(&s, 0.975))
}

/// Least-squares slope of `ys` against `xs`.
pub(crate) fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    linear_fit(xs, ys).slope
}

/// Rejects channels outside the Wiener regime and records the memory-loss
/// integral of each long-memory channel as a notice.
pub(crate) fn wiener_gate(setup: &Setup, notices: &mut Vec<String>) -> Result<(), LabError> {
    for (k, ch) in setup.channels.iter().enumerate() {
        if setup.is_degenerate(k) {
            notices.push(format!("channel {k} ({}) vanishes identically", ch.name));
            continue;
        }
        match (&setup.noise, setup.noise.h_star(ch)) {
            (_, Some(hs)) if hs >= 0.5 => {
                return Err(LabError::RegimeMismatch { channel: k, h_star: hs, required: "H*(m) < 1/2".into() });
            }
            (Noise::Fou { h, .. }, Some(hs)) => {
                let ml = memory_loss_integral(&ch.profile, *h, 1e4)?;
                let value = match ml.verdict {
                    TailVerdict::Finite => format!("{:.6}", ml.value()),
                    TailVerdict::Divergent => format!("divergent (tail exponent {:.3})", ml.fitted_exponent),
                };
                notices.push(format!("channel {k} ({}): H*(m) = {hs:.4}, memory-loss integral {value}", ch.name));
            }
            (Noise::Markov { chain }, _) => {
                let mean: f64 = chain.stationary().iter().zip(chain.values()).map(|(p, v)| p * ch.observable.eval(*v)).sum();
                if mean.abs() > 1e-10 {
                    return Err(invalid(&format!("observables[{k}]"), format!("stationary mean {mean:e} is not zero")));
                }
                let mix = chain.mixing_integral(f64::INFINITY);
                if !mix.finite {
                    return Err(LabError::RegimeMismatch { channel: k, h_star: f64::NAN, required: "a finite mixing integral".into() });
                }
                notices.push(format!("channel {k} ({}): mixing integral {:.6}", ch.name, mix.value()));
            }
            _ => {}
        }
    }
    Ok(())
}

/// Symmetric square root of a positive semi-definite matrix.
pub(crate) fn psd_sqrt(m: &nalgebra::DMatrix<f64>) -> nalgebra::DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * nalgebra::DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_variance_matches_double_sum() {
        let cov: Vec<f64> = (0..=6).map(|l| 0.7f64.powi(l)).collect();
        for n in 1..=6 {
            let w: Vec<f64> = (0..=n).map(|i| if i == 0 || i == n { 0.5 } else { 1.0 }).collect();
            let mut direct = 0.0;
            for i in 0..=n {
                for j in 0..=n {
                    direct += w[i] * w[j] * cov[i.abs_diff(j)];
                }
            }
            assert!((trapezoid_variance(&cov, n, 0.3) - 0.09 * direct).abs() < 1e-12);
        }
        assert_eq!(trapezoid_variance(&cov, 0, 1.0), 0.0);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let m = nalgebra::DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = psd_sqrt(&m);
        assert!((&r * &r - m).abs().max() < 1e-12);
    }

    #[test]
    fn bootstrap_is_deterministic_and_brackets_the_mean() {
        let xs: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
        let stat = |idx: &[usize]| idx.iter().map(|&i| xs[i]).sum::<f64>() / idx.len() as f64;
        let a = bootstrap_ci(xs.len(), 100, 4, stat);
        assert_eq!(a, bootstrap_ci(xs.len(), 100, 4, stat));
        let m = stat(&(0..200).collect::<Vec<_>>());
        assert!(a.0 < m && m < a.1);
    }
}
