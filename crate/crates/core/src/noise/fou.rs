//! Stationary fractional Ornstein–Uhlenbeck process `dy = −y dt + dB^H`.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::circulant::DENSE_LIMIT;
use super::{fgn_autocovariance, EnsembleKind, GaussianSampler, Hurst, NoiseError, StationaryEnsemble, TimeGrid};
use crate::quad::{integrate, Integral, Tolerance};
use crate::rng::{stream, tag};
use crate::stats::standard_normal_quantile;

/// Error bound above which a correlation value is rejected.
const QUAD_LIMIT: f64 = 1e-8;
/// `e^{-CUTOFF}` is below double precision relative to every retained term.
const CUTOFF: f64 = 80.0;
const BURN_IN: f64 = 10.0;
const MAX_EULER_STEP: f64 = 1.0 / 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FouMethod {
    ExactCovariance,
    EulerBurnin,
}

fn tol() -> Tolerance {
    Tolerance { abs: 1e-14, rel: 1e-12, max_panels: 4000 }
}

/// Unnormalised `Cov(y_t, y_0) = ¼∫₀^∞ e^{−q}[(t+q)^a + |t−q|^a − 2t^a] dq`, `a = 2H`.
fn autocovariance(t: f64, a: f64) -> Result<Integral, NoiseError> {
    if t == 0.0 {
        // ½Γ(a+1)
        let g = statrs::function::gamma::gamma(a + 1.0);
        return Ok(Integral { value: 0.5 * g, error: 0.0 });
    }
    // q < t: bracket = t^a [((1+u)^a − 1) + ((1−u)^a − 1)], u = q/t.
    let ta = t.powf(a);
    let near = move |q: f64| {
        let u = q / t;
        (-q).exp() * ta * ((a * u.ln_1p()).exp_m1() + (a * (-u).ln_1p()).exp_m1())
    };
    let first = integrate(near, 0.0, t.min(CUTOFF), tol())?;
    // q = t + v: bracket = (2t+v)^a + v^a − 2t^a.
    let second = if t < CUTOFF {
        let far = move |v: f64| (-(t + v)).exp() * ((2.0 * t + v).powf(a) + v.powf(a) - 2.0 * ta);
        integrate(far, 0.0, CUTOFF, tol())?
    } else {
        Integral { value: 0.0, error: 0.0 }
    };
    Ok(Integral { value: 0.25 * (first.value + second.value), error: 0.25 * (first.error + second.error) })
}

/// Normalised stationary correlation `ρ(t) = Cov(y_t, y_0)/Var(y_0)`.
pub fn fou_autocorrelation(t: f64, h: Hurst) -> Result<f64, NoiseError> {
    let t = t.abs();
    let a = 2.0 * h.value();
    let c0 = autocovariance(0.0, a)?.value;
    let c = autocovariance(t, a)?;
    let error = c.error / c0;
    if error > QUAD_LIMIT {
        return Err(NoiseError::QuadratureInaccurate { error, limit: QUAD_LIMIT });
    }
    Ok(c.value / c0)
}

/// `ρ(k·step)` for `k = 0..n`.
pub fn fou_correlation_table(h: Hurst, step: f64, n: usize) -> Result<Vec<f64>, NoiseError> {
    (0..n).into_par_iter().map(|k| fou_autocorrelation(k as f64 * step, h)).collect()
}

/// Stationary variance of `y_{i+1} = (1−δ) y_i + ξ_i` driven by fractional
/// Gaussian noise of step `δ`.
fn euler_stationary_variance(h: Hurst, delta: f64) -> f64 {
    let r = 1.0 - delta;
    let mut sum = fgn_autocovariance(0, h, delta);
    let mut rk = 1.0;
    let mut k = 1;
    while rk > 1e-17 {
        rk *= r;
        sum += 2.0 * rk * fgn_autocovariance(k, h, delta);
        k += 1;
    }
    sum / (1.0 - r * r)
}

/// Per-path generator of unit-variance stationary fOU samples on a grid.
///
/// Path `i` of seed `s` is drawn from `stream(s, FOU, i)`, so any subset of
/// paths can be produced independently.
pub struct FouSampler {
    grid: TimeGrid,
    h: Hurst,
    method: FouMethod,
    noise: GaussianSampler,
    /// Euler sub-steps per grid cell, burn-in steps, stationary sd.
    euler: Option<(usize, usize, f64)>,
}

impl FouSampler {
    pub fn new(grid: TimeGrid, h: Hurst, method: FouMethod) -> Result<Self, NoiseError> {
        let n = grid.count();
        match method {
            FouMethod::ExactCovariance => {
                let table = fou_correlation_table(h, grid.step(), n)?;
                // Lags beyond the table are only needed for a padded embedding.
                let acov = |k: usize| table.get(k).copied().unwrap_or_else(|| {
                    fou_autocorrelation(k as f64 * grid.step(), h).unwrap_or(f64::NAN)
                });
                let noise = match GaussianSampler::new(n, acov) {
                    Err(NoiseError::EmbeddingNotPsd { .. }) if n > DENSE_LIMIT => {
                        return Err(NoiseError::GridTooLarge { count: n, limit: DENSE_LIMIT })
                    }
                    other => other?,
                };
                Ok(Self { grid, h, method, noise, euler: None })
            }
            FouMethod::EulerBurnin => {
                let sub = (grid.step() / MAX_EULER_STEP).ceil().max(1.0) as usize;
                let delta = grid.step() / sub as f64;
                let burn = (BURN_IN / delta).ceil() as usize;
                let total = burn + (n - 1) * sub;
                let noise = GaussianSampler::new(total, |k| fgn_autocovariance(k, h, delta))?;
                let sd = euler_stationary_variance(h, delta).sqrt();
                Ok(Self { grid, h, method, noise, euler: Some((sub, burn, sd)) })
            }
        }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn hurst(&self) -> Hurst {
        self.h
    }

    pub fn method(&self) -> FouMethod {
        self.method
    }

    pub fn path(&self, seed: u64, index: u64) -> Vec<f64> {
        let mut rng = stream(seed, tag::FOU, index);
        match self.euler {
            None => self.noise.sample(&mut rng),
            Some((sub, burn, sd)) => {
                let delta = self.grid.step() / sub as f64;
                let xi = self.noise.sample(&mut rng);
                let mut y = sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
                let mut out = Vec::with_capacity(self.grid.count());
                for (j, x) in xi.iter().enumerate() {
                    if j >= burn && (j - burn) % sub == 0 {
                        out.push(y / sd);
                    }
                    y += -delta * y + x;
                }
                out.push(y / sd);
                out
            }
        }
    }
}

/// Samples a unit-variance stationary fOU ensemble.
pub fn sample_fou(
    grid: TimeGrid,
    h: Hurst,
    n_paths: usize,
    seed: u64,
    method: FouMethod,
) -> Result<StationaryEnsemble, NoiseError> {
    if n_paths == 0 {
        return Err(NoiseError::InvalidArgument("n_paths must be positive".into()));
    }
    let n = grid.count();
    let sampler = FouSampler::new(grid, h, method)?;
    let rows: Vec<Vec<f64>> = (0..n_paths).into_par_iter().map(|i| sampler.path(seed, i as u64)).collect();
    let values = Array2::from_shape_vec((n_paths, n), rows.concat()).expect("row lengths match grid");
    if method == FouMethod::EulerBurnin && n_paths >= 2 {
        let first = values.column(0);
        let last = values.column(n - 1);
        let drift: Vec<f64> = first.iter().zip(last.iter()).map(|(a, b)| b - a).collect();
        let z = crate::stats::mean(&drift) / crate::stats::se_mean(&drift);
        if z.abs() > standard_normal_quantile(0.995) {
            return Err(NoiseError::NonStationary { z });
        }
    }
    Ok(StationaryEnsemble { grid, values, kind: EnsembleKind::Fou, h: Some(h), normalized: true, seed })
}
