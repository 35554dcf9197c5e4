//! Fractional Brownian motion and its increments.

use ndarray::Array2;
use rayon::prelude::*;

use super::{EnsembleKind, GaussianSampler, Hurst, NoiseError, StationaryEnsemble, TimeGrid};
use crate::rng::{stream, tag};

/// `E[B_s B_t] = ½(s^{2H} + t^{2H} − |t−s|^{2H})`.
pub fn fbm_covariance(s: f64, t: f64, h: Hurst) -> f64 {
    let a = 2.0 * h.value();
    0.5 * (s.powf(a) + t.powf(a) - (t - s).abs().powf(a))
}

/// Correlation of unit-step increments at lag `t`:
/// `½(t+1)^{2H} + ½|t−1|^{2H} − t^{2H}`.
pub fn increment_correlation(t: f64, h: Hurst) -> f64 {
    let a = 2.0 * h.value();
    0.5 * (t + 1.0).powf(a) + 0.5 * (t - 1.0).abs().powf(a) - t.powf(a)
}

/// Autocovariance of increments over steps of length `step` at integer lag `k`.
pub fn fgn_autocovariance(k: usize, h: Hurst, step: f64) -> f64 {
    step.powf(2.0 * h.value()) * increment_correlation(k as f64, h)
}

/// Samples `n_paths` rows of fractional Gaussian noise on `grid`: column `j`
/// is the increment over `[t_j, t_j + step]`.
pub fn sample_fbm(grid: TimeGrid, h: Hurst, n_paths: usize, seed: u64) -> Result<StationaryEnsemble, NoiseError> {
    if n_paths == 0 {
        return Err(NoiseError::InvalidArgument("n_paths must be positive".into()));
    }
    let n = grid.count();
    let sampler = GaussianSampler::new(n, |k| fgn_autocovariance(k, h, grid.step()))?;
    let rows: Vec<Vec<f64>> =
        (0..n_paths).into_par_iter().map(|i| sampler.sample(&mut stream(seed, tag::FBM, i as u64))).collect();
    let values = Array2::from_shape_vec((n_paths, n), rows.concat()).expect("row lengths match grid");
    Ok(StationaryEnsemble { grid, values, kind: EnsembleKind::FbmIncrements, h: Some(h), normalized: false, seed })
}

/// Cumulative sums of an increment ensemble: `count + 1` columns starting at 0.
pub fn fbm_paths(increments: &StationaryEnsemble) -> Array2<f64> {
    let (rows, cols) = increments.values.dim();
    let mut out = Array2::zeros((rows, cols + 1));
    for (mut dst, src) in out.rows_mut().into_iter().zip(increments.values.rows()) {
        let mut acc = 0.0;
        for (j, v) in src.iter().enumerate() {
            acc += v;
            dst[j + 1] = acc;
        }
    }
    out
}
