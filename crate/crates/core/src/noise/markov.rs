//! Continuous-time finite-state Markov chains as strong-mixing noise.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EnsembleKind, NoiseError, StationaryEnsemble, TimeGrid};
use crate::rng::{stream, tag};

/// Subsets are enumerated exhaustively in the mixing coefficient.
const MAX_STATES: usize = 16;

/// Validated generator with its stationary law and observed state values.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    rates: DMatrix<f64>,
    values: Vec<f64>,
    pi: Vec<f64>,
}

/// `∫₀^∞ α(t)^{½−1/r} dt` split into a quadrature part and an exponential tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingIntegral {
    pub exponent: f64,
    pub spectral_gap: f64,
    pub body: f64,
    pub tail: f64,
    pub horizon: f64,
    pub finite: bool,
}

impl MixingIntegral {
    pub fn value(&self) -> f64 {
        if self.finite {
            self.body + self.tail
        } else {
            f64::INFINITY
        }
    }
}

impl MarkovChain {
    /// `recentre` shifts the state values so that their stationary mean is 0.
    pub fn new(rates: DMatrix<f64>, state_values: Vec<f64>, recentre: bool) -> Result<Self, NoiseError> {
        let n = rates.nrows();
        if n < 2 || rates.ncols() != n || state_values.len() != n {
            return Err(NoiseError::InvalidGenerator(format!(
                "need a square matrix with at least two states matching {} values",
                state_values.len()
            )));
        }
        if n > MAX_STATES {
            return Err(NoiseError::InvalidGenerator(format!("at most {MAX_STATES} states are supported")));
        }
        for i in 0..n {
            let row = rates.row(i);
            if row.iter().enumerate().any(|(j, &q)| j != i && (q < 0.0 || !q.is_finite())) {
                return Err(NoiseError::InvalidGenerator(format!("row {i} has a negative off-diagonal rate")));
            }
            let scale = row.iter().map(|q| q.abs()).fold(0.0, f64::max).max(1.0);
            if row.sum().abs() > 1e-10 * scale {
                return Err(NoiseError::InvalidGenerator(format!("row {i} does not sum to zero")));
            }
        }
        if !strongly_connected(&rates) {
            return Err(NoiseError::NotIrreducible);
        }
        let pi = stationary_law(&rates)?;
        let mut values = state_values;
        if recentre {
            let m: f64 = pi.iter().zip(&values).map(|(p, v)| p * v).sum();
            values.iter_mut().for_each(|v| *v -= m);
        }
        Ok(Self { rates, values, pi })
    }

    /// Two states with symmetric switching rate `lambda` and values ±1.
    pub fn symmetric_two_state(lambda: f64) -> Result<Self, NoiseError> {
        let q = DMatrix::from_row_slice(2, 2, &[-lambda, lambda, lambda, -lambda]);
        Self::new(q, vec![-1.0, 1.0], true)
    }

    pub fn n_states(&self) -> usize {
        self.pi.len()
    }

    pub fn stationary(&self) -> &[f64] {
        &self.pi
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    pub fn mean(&self) -> f64 {
        self.pi.iter().zip(&self.values).map(|(p, v)| p * v).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.pi.iter().zip(&self.values).map(|(p, v)| p * (v - m).powi(2)).sum()
    }

    /// `P_t = exp(tQ)`.
    pub fn transition(&self, t: f64) -> DMatrix<f64> {
        (&self.rates * t).exp()
    }

    /// Stationary correlation of the observed value process at lag `t`.
    pub fn autocorrelation(&self, t: f64) -> f64 {
        let p = self.transition(t.abs());
        let m = self.mean();
        let n = self.n_states();
        let mut c = 0.0;
        for i in 0..n {
            for j in 0..n {
                c += self.pi[i] * p[(i, j)] * (self.values[i] - m) * (self.values[j] - m);
            }
        }
        c / self.variance()
    }

    /// Strong mixing coefficient `α(t) = sup |P(X_0∈A, X_t∈B) − π(A)π(B)|`.
    pub fn alpha(&self, t: f64) -> f64 {
        let p = self.transition(t);
        let n = self.n_states();
        let mut best: f64 = 0.0;
        for mask in 1u32..(1 << n) - 1 {
            let in_a = |i: usize| mask & (1 << i) != 0;
            let pa: f64 = (0..n).filter(|&i| in_a(i)).map(|i| self.pi[i]).sum();
            // The optimal B collects the states with positive discrepancy.
            let gain: f64 = (0..n)
                .map(|j| {
                    let joint: f64 = (0..n).filter(|&i| in_a(i)).map(|i| self.pi[i] * p[(i, j)]).sum();
                    (joint - pa * self.pi[j]).max(0.0)
                })
                .sum();
            best = best.max(gain);
        }
        best
    }

    /// Smallest decay rate among the non-stationary modes of `Q`.
    pub fn spectral_gap(&self) -> f64 {
        let mut re: Vec<f64> = self.rates.complex_eigenvalues().iter().map(|z| -z.re).collect();
        re.sort_by(f64::total_cmp);
        // re[0] is the stationary mode at 0.
        re[1]
    }

    /// Mixing integral with exponent `½ − 1/r`; `r = ∞` for bounded observables.
    pub fn mixing_integral(&self, r: f64) -> MixingIntegral {
        let exponent = 0.5 - 1.0 / r;
        let gap = self.spectral_gap();
        if exponent <= 0.0 || gap <= 0.0 {
            return MixingIntegral { exponent, spectral_gap: gap, body: f64::NAN, tail: f64::NAN, horizon: 0.0, finite: false };
        }
        let dt = 0.02 / gap;
        let mut t = 0.0;
        let mut prev = self.alpha(0.0).powf(exponent);
        let mut body = 0.0;
        let mut a = f64::INFINITY;
        while t < 200.0 / gap {
            t += dt;
            a = self.alpha(t);
            let cur = a.powf(exponent);
            body += 0.5 * dt * (prev + cur);
            prev = cur;
            if a < 1e-12 {
                break;
            }
        }
        let tail = a.powf(exponent) / (exponent * gap);
        MixingIntegral { exponent, spectral_gap: gap, body, tail, horizon: t, finite: true }
    }
}

fn strongly_connected(q: &DMatrix<f64>) -> bool {
    let n = q.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                let rate = if forward { q[(i, j)] } else { q[(j, i)] };
                if j != i && rate > 0.0 && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Solves `πQ = 0`, `Σπ = 1` by LU with the last balance equation replaced.
fn stationary_law(q: &DMatrix<f64>) -> Result<Vec<f64>, NoiseError> {
    let n = q.nrows();
    let mut a = q.transpose();
    let mut b = DVector::zeros(n);
    a.row_mut(n - 1).fill(1.0);
    b[n - 1] = 1.0;
    let pi = a.lu().solve(&b).ok_or(NoiseError::NotIrreducible)?;
    Ok(pi.iter().map(|p| p.max(0.0)).collect())
}

/// Path `index` of [`sample_markov_chain`].
pub fn markov_path(grid: TimeGrid, chain: &MarkovChain, seed: u64, index: u64) -> Vec<f64> {
    let k = chain.n_states();
    let exit = |s: usize| Exp::new(-chain.rates[(s, s)]).expect("positive exit rate");
    let mut rng = stream(seed, tag::MARKOV, index);
    let mut state = pick(&mut rng, chain.pi.iter().copied());
    let mut next_jump = exit(state).sample(&mut rng);
    let mut out = Vec::with_capacity(grid.count());
    for i in 0..grid.count() {
        let t = grid.time(i);
        while next_jump <= t {
            let clock = next_jump;
            let row = chain.rates.row(state);
            state = pick(&mut rng, (0..k).map(|j| if j == state { 0.0 } else { row[j] }));
            next_jump = clock + exit(state).sample(&mut rng);
        }
        out.push(chain.values[state]);
    }
    out
}

/// Gillespie simulation observed on `grid`, started from the stationary law.
pub fn sample_markov_chain(
    grid: TimeGrid,
    chain: &MarkovChain,
    n_paths: usize,
    seed: u64,
) -> Result<StationaryEnsemble, NoiseError> {
    if n_paths == 0 {
        return Err(NoiseError::InvalidArgument("n_paths must be positive".into()));
    }
    let n = grid.count();
    let rows: Vec<Vec<f64>> = (0..n_paths).into_par_iter().map(|p| markov_path(grid, chain, seed, p as u64)).collect();
    let values = Array2::from_shape_vec((n_paths, n), rows.concat()).expect("row lengths match grid");
    Ok(StationaryEnsemble {
        grid,
        values,
        kind: EnsembleKind::MarkovChain,
        h: None,
        normalized: chain.mean().abs() < 1e-12 && (chain.variance() - 1.0).abs() < 1e-12,
        seed,
    })
}

/// Draws an index with probability proportional to `weights`.
fn pick<R: Rng>(rng: &mut R, weights: impl Iterator<Item = f64> + Clone) -> usize {
    let total: f64 = weights.clone().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last = i;
            if u < w {
                return i;
            }
            u -= w;
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{cross_moment_with_se, mean, se_mean};

    #[test]
    fn rejects_invalid_generators() {
        let bad = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 1.0, -1.0]);
        assert!(matches!(MarkovChain::new(bad, vec![0.0, 1.0], false), Err(NoiseError::InvalidGenerator(_))));
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, -1.0]);
        assert!(matches!(MarkovChain::new(neg, vec![0.0, 1.0], false), Err(NoiseError::InvalidGenerator(_))));
        let absorbing = DMatrix::from_row_slice(3, 3, &[-1.0, 1.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(MarkovChain::new(absorbing, vec![0.0; 3], false), Err(NoiseError::NotIrreducible)));
    }

    #[test]
    fn stationary_law_of_three_state_cycle() {
        let q = DMatrix::from_row_slice(3, 3, &[-1.0, 1.0, 0.0, 0.0, -2.0, 2.0, 4.0, 0.0, -4.0]);
        let c = MarkovChain::new(q, vec![1.0, 2.0, 3.0], true).unwrap();
        // Flow balance π_i q_i constant around the cycle: π ∝ (1, 1/2, 1/4).
        let want = [4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0];
        for (p, w) in c.stationary().iter().zip(want) {
            assert!((p - w).abs() < 1e-12);
        }
        assert!(c.mean().abs() < 1e-12);
    }

    #[test]
    fn two_state_autocorrelation_and_alpha_closed_forms() {
        let c = MarkovChain::symmetric_two_state(0.7).unwrap();
        for t in [0.0, 0.3, 1.0, 2.5] {
            assert!((c.autocorrelation(t) - (-1.4 * t).exp()).abs() < 1e-12);
            // A = B = {state}: |¼(1 + e^{−2λt}) − ¼|.
            assert!((c.alpha(t) - 0.25 * (-1.4 * t).exp()).abs() < 1e-12);
        }
        assert!((c.spectral_gap() - 1.4).abs() < 1e-10);
    }

    #[test]
    fn mixing_integral_matches_closed_form() {
        // ∫ (¼e^{−2λt})^{½} dt = ½ / λ.
        let c = MarkovChain::symmetric_two_state(0.7).unwrap();
        let m = c.mixing_integral(f64::INFINITY);
        assert!(m.finite);
        assert!((m.value() - 0.5 / 0.7).abs() < 1e-3, "{}", m.value());
    }

    #[test]
    fn sampled_chain_matches_autocorrelation_and_occupation() {
        let c = MarkovChain::symmetric_two_state(0.5).unwrap();
        let grid = TimeGrid::new(0.25, 9).unwrap();
        let e = sample_markov_chain(grid, &c, 10_000, 21).unwrap();
        let x0 = e.values.column(0).to_vec();
        for lag in [2usize, 4, 8] {
            let xl = e.values.column(lag).to_vec();
            let (m, se) = cross_moment_with_se(&x0, &xl);
            let want = (-(lag as f64) * 0.25).exp();
            assert!((m - want).abs() < 3.0 * se, "lag {lag}: {m} vs {want}");
        }
        let up: Vec<f64> = x0.iter().map(|&v| f64::from(v > 0.0)).collect();
        assert!((mean(&up) - 0.5).abs() < 3.0 * se_mean(&up));
        let again = sample_markov_chain(grid, &c, 10_000, 21).unwrap();
        assert_eq!(e, again);
    }
}
