//! White-noise (Volterra) representation of the stationary fOU and a
//! finite-memory moving-average ensemble built from it.
//!
//! With `β = H − ½`, the fOU is `y_t = ∫_{−∞}^t K(t−u) dW_u` where, up to a
//! constant,
//!
//! ```text
//! K(u) = u^β − ∫₀^u e^{−r} (u−r)^β dr.
//! ```
//!
//! Conditioning on the past of `W` at an anchor splits `y` into the
//! measurable part, carried by the kernel beyond the elapsed time, and an
//! independent part carried by the kernel before it.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use statrs::function::gamma::gamma;

use super::{EnsembleKind, Hurst, NoiseError, StationaryEnsemble, TimeGrid};
use crate::quad::{integrate, integrate_pieces, Tolerance};
use crate::rng::{stream, tag};

/// Beyond this lag the kernel is replaced by its asymptotic expansion.
const ASYMPTOTIC_FROM: f64 = 400.0;
/// `e^{−r}` is negligible past this point of the inner integral.
const INNER_CUTOFF: f64 = 45.0;
const ASYMPTOTIC_TERMS: usize = 6;

fn inner_tol() -> Tolerance {
    Tolerance { abs: 1e-15, rel: 1e-13, max_panels: 4000 }
}

fn outer_tol() -> Tolerance {
    Tolerance { abs: 1e-14, rel: 1e-12, max_panels: 4000 }
}

/// The fOU white-noise kernel, normalised so that `∫₀^∞ K² = 1`.
#[derive(Debug, Clone)]
pub struct FouKernel {
    h: Hurst,
    beta: f64,
    /// Unnormalised `∫₀^∞ K²`.
    total: f64,
    coeffs: [f64; ASYMPTOTIC_TERMS],
}

impl FouKernel {
    pub fn new(h: Hurst) -> Result<Self, NoiseError> {
        let beta = h.value() - 0.5;
        // K(u) ~ Σ_k a_k u^{β−k}, a_k = (−1)^{k+1} β(β−1)…(β−k+1).
        let mut coeffs = [0.0; ASYMPTOTIC_TERMS];
        let mut falling = 1.0;
        for (k, c) in coeffs.iter_mut().enumerate() {
            falling *= beta - k as f64;
            *c = if k % 2 == 0 { falling } else { -falling };
        }
        let mut kernel = Self { h, beta, total: 1.0, coeffs };
        let mut breaks = vec![0.0, 0.5];
        while *breaks.last().unwrap() * 2.0 < ASYMPTOTIC_FROM {
            breaks.push(breaks.last().unwrap() * 2.0);
        }
        breaks.push(ASYMPTOTIC_FROM);
        let body = integrate_pieces(|u| kernel.raw(u).powi(2), &breaks, outer_tol())?;
        kernel.total = body.value + kernel.raw_tail(ASYMPTOTIC_FROM);
        Ok(kernel)
    }

    pub fn hurst(&self) -> Hurst {
        self.h
    }

    /// `HΓ(2H)/c_H²` with `c_H² = 2HΓ(3/2−H)/(Γ(H+½)Γ(2−2H))`: the
    /// unnormalised `∫K²` implied by the stationary variance `HΓ(2H)`.
    pub fn closed_form_total(h: Hurst) -> f64 {
        let h = h.value();
        let c2 = 2.0 * h * gamma(1.5 - h) / (gamma(h + 0.5) * gamma(2.0 - 2.0 * h));
        h * gamma(2.0 * h) / c2
    }

    pub fn unnormalised_total(&self) -> f64 {
        self.total
    }

    /// Unnormalised kernel value.
    fn raw(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        let b = self.beta;
        if b == 0.0 {
            return (-u).exp();
        }
        if u >= ASYMPTOTIC_FROM {
            return self.asymptotic(u);
        }
        let ub = u.powf(b);
        // u^β e^{−u} + u^β ∫₀^u e^{−r}(1 − (1−r/u)^β) dr, split at u/2 so
        // the (u−r)^β endpoint behaviour is handled by a substitution.
        let head_end = (0.5 * u).min(INNER_CUTOFF);
        let head = integrate(|r| -(-r).exp() * (b * (-r / u).ln_1p()).exp_m1(), 0.0, head_end, inner_tol())
            .map(|i| i.value)
            .unwrap_or(f64::NAN);
        let mut value = ub * (-u).exp() + ub * head;
        if 0.5 * u < INNER_CUTOFF {
            // ∫_{u/2}^u e^{−r}(u^β − (u−r)^β) dr with s = u − r = w^{1/(1+β)}.
            let p = 1.0 / (1.0 + b);
            let w_max = (0.5 * u).powf(1.0 + b);
            let sing = integrate(|w| (-(u - w.powf(p))).exp(), 0.0, w_max, inner_tol())
                .map(|i| i.value * p)
                .unwrap_or(f64::NAN);
            value += ub * ((-0.5 * u).exp() - (-u).exp()) - sing;
        }
        value
    }

    fn asymptotic(&self, u: f64) -> f64 {
        self.coeffs.iter().enumerate().map(|(k, a)| a * u.powf(self.beta - (k + 1) as f64)).sum()
    }

    /// Unnormalised `∫_a^∞ K²` from the asymptotic expansion, `a ≥ 400`.
    fn raw_tail(&self, a: f64) -> f64 {
        let mut s = 0.0;
        for (i, ai) in self.coeffs.iter().enumerate() {
            for (k, ak) in self.coeffs.iter().enumerate() {
                let e = (i + k + 2) as f64 - 2.0 * self.beta - 1.0;
                s += ai * ak * a.powf(-e) / e;
            }
        }
        s
    }

    /// Normalised kernel `K/‖K‖`.
    pub fn eval(&self, u: f64) -> f64 {
        self.raw(u) / self.total.sqrt()
    }

    /// Normalised `∫_a^b K²` for `0 ≤ a ≤ b ≤ ∞`.
    pub fn mass(&self, a: f64, b: f64) -> Result<f64, NoiseError> {
        if b <= a {
            return Ok(0.0);
        }
        if self.beta == 0.0 {
            let f = |x: f64| if x.is_infinite() { 0.0 } else { (-2.0 * x).exp() };
            return Ok(f(a) - f(b));
        }
        let mut s = 0.0;
        let split = b.min(ASYMPTOTIC_FROM);
        if a < split {
            s += integrate(|u| self.raw(u).powi(2), a, split, outer_tol())?.value;
        }
        let lo = a.max(ASYMPTOTIC_FROM);
        if b > lo {
            s += self.raw_tail(lo) - if b.is_finite() { self.raw_tail(b) } else { 0.0 };
        }
        Ok(s / self.total)
    }

    /// Masses of the cells `[jΔ, (j+1)Δ]`, `j = 0..n`.
    pub fn cell_masses(&self, step: f64, n: usize) -> Result<Vec<f64>, NoiseError> {
        (0..n).into_par_iter().map(|j| self.mass(j as f64 * step, (j + 1) as f64 * step)).collect()
    }
}

/// Finite-memory moving average `y_n = Σ_{j<J} κ_j ξ_{n−j}` on a grid of
/// step `Δ`, with `κ_j² ∝ ∫_{jΔ}^{(j+1)Δ} K²` and `Σ κ_j² = 1`.
#[derive(Debug, Clone)]
pub struct VolterraModel {
    pub h: Hurst,
    pub step: f64,
    pub kappa: Vec<f64>,
    /// `suffix[d] = Σ_{j≥d} κ_j²`, with `suffix[J] = 0`.
    suffix: Vec<f64>,
}

impl VolterraModel {
    /// `memory` is the kernel support in time units.
    pub fn fou(h: Hurst, step: f64, memory: f64) -> Result<Self, NoiseError> {
        if !(step > 0.0 && memory >= step) {
            return Err(NoiseError::InvalidArgument("memory must cover at least one step".into()));
        }
        let kernel = FouKernel::new(h)?;
        let j = (memory / step).round() as usize;
        let masses = kernel.cell_masses(step, j)?;
        let norm: f64 = masses.iter().sum();
        let kappa: Vec<f64> = masses
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let sign = kernel.eval((i as f64 + 0.5) * step).signum();
                sign * (m / norm).sqrt()
            })
            .collect();
        Ok(Self::from_kappa(h, step, kappa))
    }

    pub fn from_kappa(h: Hurst, step: f64, kappa: Vec<f64>) -> Self {
        let mut suffix = vec![0.0; kappa.len() + 1];
        for j in (0..kappa.len()).rev() {
            suffix[j] = suffix[j + 1] + kappa[j] * kappa[j];
        }
        Self { h, step, kappa, suffix }
    }

    pub fn memory_len(&self) -> usize {
        self.kappa.len()
    }

    /// Variance of the part of `y_n` measurable at grid index `n − d`.
    pub fn sigma_bar_sq(&self, d: usize) -> f64 {
        self.suffix[d.min(self.kappa.len())]
    }

    pub fn total_variance(&self) -> f64 {
        self.suffix[0]
    }

    /// `Σ_j κ_j κ_{j+l}`.
    pub fn autocorrelation(&self, l: usize) -> f64 {
        self.kappa.iter().zip(self.kappa.iter().skip(l)).map(|(a, b)| a * b).sum()
    }
}

/// Ensemble of finite-memory Volterra paths together with their innovations.
///
/// `xi` has `count + J − 1` columns; column `m` is the innovation at grid
/// index `m − (J − 1)`.
#[derive(Debug, Clone)]
pub struct VolterraEnsemble {
    pub model: Arc<VolterraModel>,
    pub xi: Array2<f64>,
    pub ensemble: StationaryEnsemble,
}

impl VolterraEnsemble {
    pub fn sample(model: Arc<VolterraModel>, count: usize, n_paths: usize, seed: u64) -> Result<Self, NoiseError> {
        Self::sample_range(model, count, 0..n_paths, seed)
    }

    /// Paths `range` of the ensemble drawn by [`VolterraEnsemble::sample`].
    pub fn sample_range(model: Arc<VolterraModel>, count: usize, range: std::ops::Range<usize>, seed: u64) -> Result<Self, NoiseError> {
        let n_paths = range.len();
        if n_paths == 0 {
            return Err(NoiseError::InvalidArgument("n_paths must be positive".into()));
        }
        let grid = TimeGrid::new(model.step, count)?;
        let jlen = model.memory_len();
        let width = count + jlen - 1;
        let conv = Convolver::new(&model.kappa, width);
        let rows: Vec<(Vec<f64>, Vec<f64>)> = range
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(seed, tag::VOLTERRA, i as u64);
                let xi: Vec<f64> = (0..width).map(|_| rng.sample(StandardNormal)).collect();
                let y = conv.valid(&xi, count);
                (xi, y)
            })
            .collect();
        let (xis, ys): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        let xi = Array2::from_shape_vec((n_paths, width), xis.concat()).expect("innovation rows");
        let values = Array2::from_shape_vec((n_paths, count), ys.concat()).expect("path rows");
        let ensemble = StationaryEnsemble {
            grid,
            values,
            kind: EnsembleKind::VolterraFou,
            h: Some(model.h),
            normalized: true,
            seed,
        };
        Ok(Self { model, xi, ensemble })
    }

    /// Offset of grid index 0 inside an innovation row.
    pub fn offset(&self) -> usize {
        self.model.memory_len() - 1
    }
}

/// FFT-based causal convolution with a fixed kernel.
struct Convolver {
    kernel_hat: Vec<Complex64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    jlen: usize,
}

impl Convolver {
    fn new(kernel: &[f64], width: usize) -> Self {
        let size = (width + kernel.len()).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(size);
        let inv = planner.plan_fft_inverse(size);
        let mut kernel_hat = vec![Complex64::new(0.0, 0.0); size];
        for (k, v) in kernel_hat.iter_mut().zip(kernel) {
            k.re = *v;
        }
        fwd.process(&mut kernel_hat);
        Self { kernel_hat, fwd, inv, jlen: kernel.len() }
    }

    /// `out[n] = Σ_j κ_j x[n + J − 1 − j]` for `n < count`.
    fn valid(&self, x: &[f64], count: usize) -> Vec<f64> {
        let size = self.kernel_hat.len();
        let mut buf = vec![Complex64::new(0.0, 0.0); size];
        for (b, v) in buf.iter_mut().zip(x) {
            b.re = *v;
        }
        self.fwd.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / size as f64;
        (0..count).map(|n| buf[n + self.jlen - 1].re * scale).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::fou_autocorrelation;

    fn hurst(h: f64) -> Hurst {
        Hurst::new(h).unwrap()
    }

    #[test]
    fn kernel_energy_matches_stationary_variance() {
        for h in [0.3, 0.6, 0.7, 0.8] {
            let k = FouKernel::new(hurst(h)).unwrap();
            let want = FouKernel::closed_form_total(hurst(h));
            let rel = (k.unnormalised_total() - want).abs() / want;
            assert!(rel < 1e-9, "h={h}: {} vs {want}", k.unnormalised_total());
        }
    }

    #[test]
    fn brownian_kernel_is_exponential() {
        let k = FouKernel::new(hurst(0.5)).unwrap();
        for u in [0.1, 1.0, 5.0] {
            assert!((k.eval(u) - 2f64.sqrt() * (-u).exp()).abs() < 1e-12);
        }
        assert!((k.mass(1.0, f64::INFINITY).unwrap() - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn kernel_autocorrelation_reproduces_fou_correlation() {
        // ρ(t) = ∫₀^∞ K(u)K(u+t) du for the normalised kernel.
        let h = hurst(0.7);
        let k = FouKernel::new(h).unwrap();
        for t in [0.5, 2.0] {
            let breaks = [0.0, 0.25, 1.0, 4.0, 16.0, 64.0, 256.0, 1024.0, 1e4, 1e5, 1e6];
            let r = integrate_pieces(|u| k.eval(u) * k.eval(u + t), &breaks, Tolerance { abs: 1e-10, rel: 1e-9, max_panels: 4000 })
                .unwrap()
                .value;
            let want = fou_autocorrelation(t, h).unwrap();
            // The truncated range misses an O(10^{6(2H−2)}) tail.
            assert!((r - want).abs() < 1e-4, "t={t}: {r} vs {want}");
        }
    }

    #[test]
    fn asymptotic_expansion_matches_quadrature_near_switch() {
        let k = FouKernel::new(hurst(0.7)).unwrap();
        let exact = k.raw(399.0);
        let asym = k.asymptotic(399.0);
        assert!((exact - asym).abs() < 1e-12 * exact.abs().max(1e-3), "{exact} {asym}");
    }

    #[test]
    fn discrete_model_is_normalised_with_monotone_split() {
        let m = VolterraModel::fou(hurst(0.7), 0.125, 16.0).unwrap();
        assert_eq!(m.memory_len(), 128);
        assert!((m.total_variance() - 1.0).abs() < 1e-14);
        assert!((0..m.memory_len()).all(|d| m.sigma_bar_sq(d + 1) <= m.sigma_bar_sq(d)));
        assert_eq!(m.sigma_bar_sq(m.memory_len()), 0.0);
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let kappa = vec![0.5, -0.25, 0.125, 1.0];
        let model = Arc::new(VolterraModel::from_kappa(hurst(0.6), 0.5, kappa.clone()));
        let e = VolterraEnsemble::sample(model, 20, 2, 3).unwrap();
        let off = e.offset();
        for p in 0..2 {
            for n in 0..20 {
                let direct: f64 = kappa.iter().enumerate().map(|(j, k)| k * e.xi[(p, n + off - j)]).sum();
                assert!((direct - e.ensemble.values[(p, n)]).abs() < 1e-12);
            }
        }
    }
}
