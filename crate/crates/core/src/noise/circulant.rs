//! Exact sampling of stationary Gaussian sequences from their autocovariance.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};

use super::NoiseError;

/// Largest sequence length for the dense Cholesky fallback.
pub const DENSE_LIMIT: usize = 4096;
/// Relative tolerance for negative circulant eigenvalues.
const EIGEN_TOL: f64 = 1e-9;
/// Maximum factor by which the minimal embedding is enlarged before giving up.
const MAX_PADDING: usize = 8;

enum Factor {
    Circulant { sqrt_eig: Vec<f64>, fft: Arc<dyn Fft<f64>> },
    Dense(DMatrix<f64>),
}

/// Draws `n` consecutive values of a zero-mean stationary Gaussian sequence.
pub struct GaussianSampler {
    n: usize,
    factor: Factor,
}

impl GaussianSampler {
    /// `acov(k)` is the lag-`k` autocovariance; it may be queried beyond `n`
    /// when the minimal embedding has to be padded.
    pub fn new(n: usize, acov: impl Fn(usize) -> f64) -> Result<Self, NoiseError> {
        if n < 2 {
            return Err(NoiseError::InvalidArgument("sequence length must be at least 2".into()));
        }
        let gamma0 = acov(0);
        let mut min_eig = f64::NEG_INFINITY;
        let mut planner = FftPlanner::new();
        let mut half = n - 1;
        while half <= MAX_PADDING * (n - 1) {
            let m = 2 * half;
            let mut row: Vec<Complex64> = (0..m)
                .map(|j| Complex64::new(acov(if j <= half { j } else { m - j }), 0.0))
                .collect();
            planner.plan_fft_forward(m).process(&mut row);
            min_eig = row.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
            if min_eig >= -EIGEN_TOL * gamma0 {
                let sqrt_eig = row.iter().map(|c| (c.re.max(0.0) / m as f64).sqrt()).collect();
                return Ok(Self { n, factor: Factor::Circulant { sqrt_eig, fft: planner.plan_fft_forward(m) } });
            }
            half *= 2;
        }
        if n > DENSE_LIMIT {
            return Err(NoiseError::EmbeddingNotPsd { min_eigenvalue: min_eig });
        }
        Self::dense(n, acov).map_err(|_| NoiseError::EmbeddingNotPsd { min_eigenvalue: min_eig })
    }

    /// Dense Cholesky factorisation of the Toeplitz covariance.
    pub fn dense(n: usize, acov: impl Fn(usize) -> f64) -> Result<Self, NoiseError> {
        let lags: Vec<f64> = (0..n).map(acov).collect();
        let cov = DMatrix::from_fn(n, n, |i, j| lags[i.abs_diff(j)]);
        let chol = cov.cholesky().ok_or(NoiseError::EmbeddingNotPsd { min_eigenvalue: f64::NAN })?;
        Ok(Self { n, factor: Factor::Dense(chol.unpack()) })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_circulant(&self) -> bool {
        matches!(self.factor, Factor::Circulant { .. })
    }

    /// Fills `out` (length `len()`) with one draw.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n);
        match &self.factor {
            Factor::Circulant { sqrt_eig, fft } => {
                let mut buf: Vec<Complex64> = sqrt_eig
                    .iter()
                    .map(|&s| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex64::new(s * re, s * im)
                    })
                    .collect();
                fft.process(&mut buf);
                for (o, w) in out.iter_mut().zip(&buf) {
                    *o = w.re;
                }
            }
            Factor::Dense(l) => {
                let z = DVector::from_fn(self.n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let x = l * z;
                out.copy_from_slice(x.as_slice());
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.sample_into(rng, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, tag};

    #[test]
    fn white_noise_has_unit_variance_and_no_correlation() {
        let s = GaussianSampler::new(16, |k| if k == 0 { 1.0 } else { 0.0 }).unwrap();
        assert!(s.is_circulant());
        let n = 20_000;
        let (mut v, mut c) = (0.0, 0.0);
        for i in 0..n {
            let x = s.sample(&mut stream(1, tag::TEST, i));
            v += x[3] * x[3];
            c += x[3] * x[4];
        }
        assert!((v / n as f64 - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt());
        assert!((c / n as f64).abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn dense_and_circulant_factors_agree_in_law() {
        let acov = |k: usize| 0.6f64.powi(k as i32);
        let dense = GaussianSampler::dense(12, acov).unwrap();
        let circ = GaussianSampler::new(12, acov).unwrap();
        assert!(circ.is_circulant() && !dense.is_circulant());
        let n = 20_000;
        for s in [&dense, &circ] {
            let mut c = 0.0;
            for i in 0..n {
                let x = s.sample(&mut stream(2, tag::TEST, i));
                c += x[5] * x[7];
            }
            assert!((c / n as f64 - 0.36).abs() < 4.0 * (1.36f64 / n as f64).sqrt());
        }
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let acov = |k: usize| if k <= 1 { 1.0 } else { -1.0 };
        assert!(matches!(GaussianSampler::new(8, acov), Err(NoiseError::EmbeddingNotPsd { .. })));
    }
}
