//! Fast-noise models as seen by the experiments: per-path generators,
//! observable covariances and area constants.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{Channel, FouMethodSpec, NoiseSpec};
use super::LabError;
use crate::decomp::{area_constant, area_constant_discrete, DecompError};
use crate::hermite::{cross_covariance, h_star};
use crate::noise::{
    fou_correlation_table, markov_path, FouMethod, FouSampler, Hurst, MarkovChain, TimeGrid, VolterraModel,
};
use crate::quad::{integrate, Tolerance};
use crate::rng::{stream, tag};

#[derive(Debug, Clone)]
pub enum Noise {
    Fou { h: Hurst, method: FouMethod },
    Volterra { model: Arc<VolterraModel> },
    Markov { chain: MarkovChain },
}

impl Noise {
    pub fn from_spec(spec: &NoiseSpec, fast_step: f64) -> Result<Self, LabError> {
        Ok(match spec {
            NoiseSpec::Fou { hurst, method } => Noise::Fou {
                h: Hurst::new(*hurst)?,
                method: match method {
                    FouMethodSpec::Exact => FouMethod::ExactCovariance,
                    FouMethodSpec::Euler => FouMethod::EulerBurnin,
                },
            },
            NoiseSpec::Volterra { hurst, memory } => {
                Noise::Volterra { model: Arc::new(VolterraModel::fou(Hurst::new(*hurst)?, fast_step, *memory)?) }
            }
            NoiseSpec::Markov { rates, values } => {
                let n = values.len();
                let q = DMatrix::from_row_iterator(n, n, rates.iter().flatten().copied());
                Noise::Markov { chain: MarkovChain::new(q, values.clone(), true)? }
            }
        })
    }

    pub fn hurst(&self) -> Option<Hurst> {
        match self {
            Noise::Fou { h, .. } => Some(*h),
            Noise::Volterra { model } => Some(model.h),
            Noise::Markov { .. } => None,
        }
    }

    /// Hurst parameter unless the noise is short-memory (Markov, or `h = ½`).
    pub fn long_memory(&self) -> Option<Hurst> {
        self.hurst().filter(|h| !h.is_half())
    }

    /// `H*(m)` of a channel; `None` for short-memory noise.
    pub fn h_star(&self, ch: &Channel) -> Option<f64> {
        let h = self.long_memory()?;
        ch.profile.rank.filter(|&m| m >= 1).map(|m| h_star(m, h))
    }

    pub fn source(&self, grid: TimeGrid) -> Result<FastSource, LabError> {
        Ok(match self {
            Noise::Fou { h, method } => FastSource::Fou(FouSampler::new(grid, *h, *method)?),
            Noise::Volterra { model } => {
                if (model.step - grid.step()).abs() > 1e-12 * grid.step() {
                    return Err(LabError::ConfigInvalid {
                        field: "grid.fast_step".into(),
                        reason: "volterra model and fast grid disagree".into(),
                    });
                }
                FastSource::Volterra { model: model.clone(), count: grid.count() }
            }
            Noise::Markov { chain } => FastSource::Markov { chain: chain.clone(), grid },
        })
    }

    /// `E[G_a(y_{ℓΔ}) G_b(y_0)] − E[G_a] E[G_b]` for `ℓ = 0..n`.
    pub fn lag_covariance(&self, a: &Channel, b: &Channel, step: f64, n: usize) -> Result<Vec<f64>, LabError> {
        Ok(match self {
            Noise::Fou { h, .. } => {
                fou_correlation_table(*h, step, n)?.into_iter().map(|r| cross_covariance(&a.profile, &b.profile, r)).collect()
            }
            Noise::Volterra { model } => {
                (0..n).map(|l| cross_covariance(&a.profile, &b.profile, model.autocorrelation(l))).collect()
            }
            Noise::Markov { chain } => {
                let p = chain.transition(step);
                let mut pw = DMatrix::identity(chain.n_states(), chain.n_states());
                (0..n)
                    .map(|_| {
                        let c = markov_covariance(chain, &pw, a, b);
                        pw = &pw * &p;
                        c
                    })
                    .collect()
            }
        })
    }

    /// `A^{ab} = ∫₀^∞ E[G_a(y_s) G_b(y_0)] ds`.
    pub fn area(&self, a: &Channel, b: &Channel) -> Result<f64, LabError> {
        match self {
            Noise::Fou { h, .. } => Ok(area_constant(&a.profile, &b.profile, *h)?),
            Noise::Volterra { model } => Ok(area_constant_discrete(&a.profile, &b.profile, model)),
            Noise::Markov { chain } => {
                let gap = chain.spectral_gap();
                let horizon = 40.0 / gap;
                let f = |t: f64| markov_covariance(chain, &chain.transition(t), a, b);
                let tol = Tolerance { abs: 1e-12, rel: 1e-10, max_panels: 2000 };
                Ok(integrate(f, 0.0, horizon, tol).map_err(DecompError::from)?.value)
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Noise::Fou { h, method } => format!("fOU h={} ({method:?})", h.value()),
            Noise::Volterra { model } => format!("finite-memory fOU h={} memory={}", model.h.value(), model.memory_len() as f64 * model.step),
            Noise::Markov { chain } => format!("{}-state Markov chain", chain.n_states()),
        }
    }
}

fn markov_covariance(chain: &MarkovChain, p: &DMatrix<f64>, a: &Channel, b: &Channel) -> f64 {
    let pi = DVector::from_column_slice(chain.stationary());
    let ga = DVector::from_iterator(chain.n_states(), chain.values().iter().map(|&v| a.observable.eval(v)));
    let gb = DVector::from_iterator(chain.n_states(), chain.values().iter().map(|&v| b.observable.eval(v)));
    let joint = pi.component_mul(&gb).dot(&(p * &ga));
    joint - pi.dot(&ga) * pi.dot(&gb)
}

/// Per-path generator on a fixed fast grid.
pub enum FastSource {
    Fou(FouSampler),
    Volterra { model: Arc<VolterraModel>, count: usize },
    Markov { chain: MarkovChain, grid: TimeGrid },
}

impl FastSource {
    /// Path `index`; identical to row `index` of the corresponding ensemble sampler.
    pub fn path(&self, seed: u64, index: u64) -> Vec<f64> {
        match self {
            FastSource::Fou(s) => s.path(seed, index),
            FastSource::Volterra { model, count } => {
                let jlen = model.memory_len();
                let mut rng = stream(seed, tag::VOLTERRA, index);
                let xi: Vec<f64> = (0..count + jlen - 1).map(|_| rng.sample(StandardNormal)).collect();
                (0..*count)
                    .map(|n| model.kappa.iter().enumerate().map(|(j, k)| k * xi[n + jlen - 1 - j]).sum())
                    .collect()
            }
            FastSource::Markov { chain, grid } => markov_path(*grid, chain, seed, index),
        }
    }
}
