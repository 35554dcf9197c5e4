//! Monte Carlo experiments with pre-registered statistical verdicts.
//!
//! An [`ExperimentConfig`] names one experiment kind. [`run_config`] samples
//! the fast noise path by path, evaluates the kind-specific statistics and
//! returns an [`ExperimentOutput`] holding a versioned JSON report and CSV
//! tables. Every path draws from its own counter-based stream, so the output
//! does not depend on the size of the worker pool.

mod clt;
mod common;
pub mod config;
pub mod distance;
mod hermite_regime;
mod homogenize;
mod moments;
pub mod report;
mod residual;
pub mod source;

use std::path::Path;

use thiserror::Error;

use crate::container::ContainerError;
use crate::decomp::DecompError;
use crate::hermite::HermiteError;
use crate::noise::NoiseError;
use crate::roughpath::RoughPathError;
use crate::solver::SolverError;

pub use clt::{verify_clt, verify_covariance};
pub use config::{ExperimentConfig, ExperimentKind};
pub use hermite_regime::verify_hermite_regime;
pub use homogenize::homogenize;
pub use moments::verify_moments;
pub use report::{ConvergenceReport, ExperimentOutput, Table, Verdict};
pub use residual::decomp_residual;

/// Environment variable holding the worker count.
pub const THREADS_ENV: &str = "ROUGHLAB_THREADS";

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid configuration field `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },
    #[error("channel {channel} has H*(m) = {h_star:.4}; this experiment needs {required}")]
    RegimeMismatch { channel: usize, h_star: f64, required: String },
    #[error("assumption gate failed: {violated}")]
    GateFailed { violated: String },
    #[error("solver failed on path {path} at epsilon {epsilon}: {source}")]
    Solver { path: usize, epsilon: f64, source: SolverError },
    #[error(transparent)]
    Limit(#[from] SolverError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Hermite(#[from] HermiteError),
    #[error(transparent)]
    RoughPath(#[from] RoughPathError),
    #[error(transparent)]
    Decomp(#[from] DecompError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Sizes the global worker pool from `ROUGHLAB_THREADS` when set.
///
/// Has no effect once the pool exists.
pub fn init_threads() {
    let n = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0);
    if let Some(n) = n {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

pub fn run_config(cfg: &ExperimentConfig) -> Result<ExperimentOutput, LabError> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::Clt => verify_clt(cfg),
        ExperimentKind::Covariance => verify_covariance(cfg),
        ExperimentKind::MomentFit => verify_moments(cfg),
        ExperimentKind::HermiteRegime => verify_hermite_regime(cfg),
        ExperimentKind::Homogenize1d | ExperimentKind::HomogenizeNd => homogenize(cfg),
        ExperimentKind::DecompResidual => decomp_residual(cfg),
    }
}

/// Reads a TOML config, runs it and writes the artifacts to its output directory.
pub fn run(path: &Path) -> Result<ExperimentOutput, LabError> {
    let text = std::fs::read_to_string(path)?;
    let cfg = ExperimentConfig::from_toml(&text)?;
    let out = run_config(&cfg)?;
    out.write(&cfg.output_dir)?;
    Ok(out)
}
