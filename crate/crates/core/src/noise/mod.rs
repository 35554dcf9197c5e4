//! Fast stationary processes and their conditional decompositions.

mod circulant;
pub(crate) mod conditional;
mod fbm;
mod fou;
mod markov;
mod volterra;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::container::{Container, ContainerError};
use crate::quad::QuadError;

pub use circulant::GaussianSampler;
pub use conditional::{
    conditional_hermite_expectation, conditional_split, memory_loss_integral, ConditionalSplit, MemoryLoss,
    TailVerdict,
};
pub use fbm::{fbm_covariance, fbm_paths, fgn_autocovariance, increment_correlation, sample_fbm};
pub use fou::{fou_autocorrelation, fou_correlation_table, sample_fou, FouMethod, FouSampler};
pub use markov::{markov_path, sample_markov_chain, MarkovChain, MixingIntegral};
pub use volterra::{FouKernel, VolterraEnsemble, VolterraModel};

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("Hurst parameter must lie in (0, 1), got {0}")]
    InvalidHurst(f64),
    #[error("time grid needs step > 0 and count >= 2 (step {step}, count {count})")]
    DegenerateGrid { step: f64, count: usize },
    #[error("circulant embedding is not positive semi-definite (min eigenvalue {min_eigenvalue:e}) and the grid is too large for a dense factorisation")]
    EmbeddingNotPsd { min_eigenvalue: f64 },
    #[error("grid of {count} points exceeds the exact-covariance limit of {limit}")]
    GridTooLarge { count: usize, limit: usize },
    #[error("burn-in diagnostics failed: mean drift z = {z:.3}")]
    NonStationary { z: f64 },
    #[error("rate matrix is not a valid generator: {0}")]
    InvalidGenerator(String),
    #[error("rate matrix is not irreducible")]
    NotIrreducible,
    #[error("quadrature failure: {0}")]
    Quadrature(#[from] QuadError),
    #[error("quadrature error estimate {error:e} exceeds {limit:e}")]
    QuadratureInaccurate { error: f64, limit: f64 },
    #[error("observable has Hermite rank 0")]
    RankZero,
    #[error("anchor {anchor} outside grid of {count} points")]
    AnchorOutOfRange { anchor: usize, count: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Hurst parameter `h ∈ (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Hurst(f64);

impl Hurst {
    pub fn new(h: f64) -> Result<Self, NoiseError> {
        if h > 0.0 && h < 1.0 {
            Ok(Self(h))
        } else {
            Err(NoiseError::InvalidHurst(h))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Brownian case, where the fractional kernels collapse to exponentials.
    pub fn is_half(self) -> bool {
        (self.0 - 0.5).abs() < 1e-12
    }
}

impl TryFrom<f64> for Hurst {
    type Error = NoiseError;
    fn try_from(h: f64) -> Result<Self, Self::Error> {
        Self::new(h)
    }
}

impl From<Hurst> for f64 {
    fn from(h: Hurst) -> f64 {
        h.0
    }
}

/// Uniform grid `t_i = i * step`, `i = 0..count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    step: f64,
    count: usize,
}

impl TimeGrid {
    pub fn new(step: f64, count: usize) -> Result<Self, NoiseError> {
        if step > 0.0 && step.is_finite() && count >= 2 {
            Ok(Self { step, count })
        } else {
            Err(NoiseError::DegenerateGrid { step, count })
        }
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.step
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.count - 1)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|i| self.time(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    /// Column `j` holds `B_{t_{j+1}} - B_{t_j}`.
    FbmIncrements,
    Fou,
    MarkovChain,
    /// Finite-memory moving average of white noise approximating the fOU.
    VolterraFou,
}

/// Sampled paths sharing one grid; row `i` is path `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryEnsemble {
    pub grid: TimeGrid,
    pub values: Array2<f64>,
    pub kind: EnsembleKind,
    pub h: Option<Hurst>,
    pub normalized: bool,
    pub seed: u64,
}

impl StationaryEnsemble {
    pub fn n_paths(&self) -> usize {
        self.values.nrows()
    }

    pub fn path(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn to_container(&self) -> Result<Container, ContainerError> {
        let mut meta = Map::new();
        meta.insert("kind".into(), serde_json::to_value(self.kind)?);
        meta.insert("step".into(), Value::from(self.grid.step()));
        meta.insert("count".into(), Value::from(self.grid.count()));
        meta.insert("h".into(), self.h.map_or(Value::Null, |h| Value::from(h.value())));
        meta.insert("seed".into(), Value::from(self.seed));
        meta.insert("n_paths".into(), Value::from(self.n_paths()));
        meta.insert("normalized".into(), Value::from(self.normalized));
        let mut c = Container::new(meta);
        let (rows, cols) = self.values.dim();
        c.push_block("values", vec![rows, cols], self.values.iter().copied().collect())?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self, ContainerError> {
        let field = |k: &str| c.meta.get(k).cloned().unwrap_or(Value::Null);
        let bad = |k: &str| {
            ContainerError::Header(serde::de::Error::custom(format!("missing or invalid `{k}`")))
        };
        let kind: EnsembleKind = serde_json::from_value(field("kind"))?;
        let step = field("step").as_f64().ok_or_else(|| bad("step"))?;
        let count = field("count").as_u64().ok_or_else(|| bad("count"))? as usize;
        let grid = TimeGrid::new(step, count).map_err(|_| bad("grid"))?;
        let h = match field("h").as_f64() {
            Some(h) => Some(Hurst::new(h).map_err(|_| bad("h"))?),
            None => None,
        };
        let block = c.block("values")?;
        let values = Array2::from_shape_vec((block.spec.shape[0], block.spec.shape[1]), block.data.clone())
            .map_err(|_| bad("values"))?;
        Ok(Self {
            grid,
            values,
            kind,
            h,
            normalized: field("normalized").as_bool().unwrap_or(false),
            seed: field("seed").as_u64().unwrap_or(0),
        })
    }
}
