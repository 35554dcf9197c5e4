//! Experiment configuration read from TOML.
//!
//! ```toml
//! kind = "clt"
//! seed = 7
//! n_paths = 10000
//! epsilons = [1e-1, 1e-2, 1e-3]
//! t_max = 1.0
//! observables = ["H2"]
//! output_dir = "out/clt"
//!
//! [noise]
//! kind = "fou"
//! hurst = 0.7
//!
//! [tolerances]
//! significance = 0.01
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::LabError;
use crate::hermite::{expand, HermiteProfile, Observable};

pub const KINDS: [&str; 7] = ["clt", "covariance", "moment_fit", "hermite_regime", "homogenize_1d", "homogenize_nd", "decomp_residual"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Clt,
    Covariance,
    MomentFit,
    HermiteRegime,
    #[serde(rename = "homogenize_1d")]
    Homogenize1d,
    #[serde(rename = "homogenize_nd")]
    HomogenizeNd,
    DecompResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FouMethodSpec {
    #[default]
    Exact,
    Euler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    Fou {
        hurst: f64,
        #[serde(default)]
        method: FouMethodSpec,
    },
    /// Finite-memory moving average with the fOU kernel truncated at `memory`.
    Volterra {
        hurst: f64,
        #[serde(default = "default_memory")]
        memory: f64,
    },
    /// Continuous-time chain with generator `rates`; state values are recentred.
    Markov { rates: Vec<Vec<f64>>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// `f(x) = x`.
    Identity,
    Zero,
    Constant { value: Vec<f64> },
    /// `f(x) = M x`.
    Linear { matrix: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub x0: Vec<f64>,
    /// One field per observable channel.
    pub fields: Vec<FieldSpec>,
    /// Number of leading Wiener channels; inferred from the ranks when absent.
    #[serde(default)]
    pub n_split: Option<usize>,
    /// Moment exponents per channel for the assumption gate.
    #[serde(default)]
    pub p: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub significance: f64,
    pub se_multiplier: f64,
    pub first_order_slope: f64,
    pub second_order_slope: f64,
    pub exponent: f64,
    pub holder_floor: f64,
    pub wasserstein: f64,
    pub oracle_relative: f64,
    pub identity: f64,
    pub moment_p: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            significance: 0.01,
            se_multiplier: 3.0,
            first_order_slope: 0.05,
            second_order_slope: 0.1,
            exponent: 0.05,
            holder_floor: 0.5,
            wasserstein: 0.05,
            oracle_relative: 1e-3,
            identity: 1e-8,
            moment_p: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    /// Fast-time step.
    pub fast_step: f64,
    /// Upper bound on the number of slow grid cells.
    pub max_slow_cells: usize,
    /// Smallest moment-fit gap in units of `ε`.
    pub min_gap_over_eps: f64,
    /// Cells of the limit-driver grid when no Hermite channel fixes it.
    pub limit_cells: usize,
    /// Paths used for Hölder and Young-solver checks.
    pub solver_paths: usize,
    pub bootstrap: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { fast_step: 0.125, max_slow_cells: 1024, min_gap_over_eps: 16.0, limit_cells: 1024, solver_paths: 16, bootstrap: 200 }
    }
}

fn default_memory() -> f64 {
    32.0
}

fn default_paths() -> usize {
    10_000
}

fn default_epsilons() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3]
}

fn default_t_max() -> f64 {
    1.0
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    pub noise: NoiseSpec,
    /// Hermite sums such as `"H2+H3"`, or `"sign"`.
    pub observables: Vec<String>,
    #[serde(default)]
    pub system: Option<SystemSpec>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn invalid(field: &str, reason: impl Into<String>) -> LabError {
    LabError::ConfigInvalid { field: field.into(), reason: reason.into() }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, LabError> {
        let value: toml::Table = toml::from_str(text).map_err(|e| invalid("<syntax>", e.message()))?;
        match value.get("kind") {
            None => return Err(invalid("kind", "missing")),
            Some(toml::Value::String(k)) if KINDS.contains(&k.as_str()) => {}
            Some(other) => return Err(invalid("kind", format!("unknown experiment kind {other}; expected one of {KINDS:?}"))),
        }
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let field = msg.split('`').nth(1).unwrap_or("<document>").to_string();
            invalid(&field, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), LabError> {
        if self.n_paths < 2 {
            return Err(invalid("n_paths", "at least two paths are required"));
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            return Err(invalid("epsilons", "values must lie in (0, 1)"));
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("epsilons", "schedule must be strictly decreasing"));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(invalid("t_max", "must be positive"));
        }
        if self.observables.is_empty() {
            return Err(invalid("observables", "at least one observable is required"));
        }
        self.channels()?;
        let t = &self.tolerances;
        let named = [
            ("tolerances.significance", t.significance),
            ("tolerances.se_multiplier", t.se_multiplier),
            ("tolerances.first_order_slope", t.first_order_slope),
            ("tolerances.second_order_slope", t.second_order_slope),
            ("tolerances.exponent", t.exponent),
            ("tolerances.holder_floor", t.holder_floor),
            ("tolerances.wasserstein", t.wasserstein),
            ("tolerances.oracle_relative", t.oracle_relative),
            ("tolerances.identity", t.identity),
            ("tolerances.moment_p", t.moment_p),
        ];
        if let Some((name, _)) = named.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid(name, "tolerances must be positive"));
        }
        if t.significance >= 1.0 {
            return Err(invalid("tolerances.significance", "must be below 1"));
        }
        if t.moment_p <= 2.0 {
            return Err(invalid("tolerances.moment_p", "must exceed 2"));
        }
        let g = &self.grid;
        if !(g.fast_step > 0.0) || g.max_slow_cells < 4 || g.limit_cells < 4 || g.solver_paths == 0 || g.bootstrap < 10 || !(g.min_gap_over_eps > 0.0) {
            return Err(invalid("grid", "fast_step, min_gap_over_eps positive; max_slow_cells, limit_cells >= 4; bootstrap >= 10"));
        }
        match &self.noise {
            NoiseSpec::Fou { hurst, .. } | NoiseSpec::Volterra { hurst, .. } if !(*hurst > 0.0 && *hurst < 1.0) => {
                return Err(invalid("noise.hurst", "must lie in (0, 1)"));
            }
            NoiseSpec::Volterra { memory, .. } if !(*memory >= g.fast_step) => {
                return Err(invalid("noise.memory", "must cover at least one fast step"));
            }
            NoiseSpec::Markov { rates, values } if rates.len() != values.len() || rates.iter().any(|r| r.len() != values.len()) => {
                return Err(invalid("noise.rates", "generator must be square and match the state values"));
            }
            _ => {}
        }
        if let Some(sys) = &self.system {
            if sys.fields.len() != self.observables.len() {
                return Err(invalid("system.fields", "need one field per observable"));
            }
            if sys.x0.is_empty() {
                return Err(invalid("system.x0", "must be nonempty"));
            }
            let d = sys.x0.len();
            for f in &sys.fields {
                match f {
                    FieldSpec::Constant { value } if value.len() != d => return Err(invalid("system.fields", "constant field has wrong dimension")),
                    FieldSpec::Linear { matrix } if matrix.len() != d || matrix.iter().any(|r| r.len() != d) => {
                        return Err(invalid("system.fields", "linear field must be a d x d matrix"))
                    }
                    _ => {}
                }
            }
            if let Some(p) = &sys.p {
                if p.len() != self.observables.len() || p.iter().any(|&v| !(v > 2.0)) {
                    return Err(invalid("system.p", "one exponent > 2 per channel"));
                }
            }
        }
        let needs_system = matches!(self.kind, ExperimentKind::Homogenize1d | ExperimentKind::HomogenizeNd);
        if needs_system && self.system.is_none() {
            return Err(invalid("system", "homogenisation needs a system"));
        }
        if self.kind == ExperimentKind::Homogenize1d && self.system.as_ref().is_some_and(|s| s.x0.len() != 1) {
            return Err(invalid("system.x0", "homogenize_1d needs a scalar state"));
        }
        if self.kind == ExperimentKind::DecompResidual && !matches!(self.noise, NoiseSpec::Volterra { .. }) {
            return Err(invalid("noise.kind", "decomp_residual runs on the volterra model"));
        }
        if self.kind == ExperimentKind::HermiteRegime && self.observables.len() != 1 {
            return Err(invalid("observables", "hermite_regime takes a single channel"));
        }
        Ok(())
    }

    /// Observables and, for Gaussian noise, their Hermite profiles.
    pub fn channels(&self) -> Result<Vec<Channel>, LabError> {
        self.observables
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let obs: Observable = s.parse().map_err(|e| invalid(&format!("observables[{k}]"), format!("{e}")))?;
                let profile = match &obs {
                    Observable::Hermite(c) => HermiteProfile::from_coeffs(c.clone()),
                    other => expand(other, 40).map_err(|e| invalid(&format!("observables[{k}]"), format!("{e}")))?,
                };
                Ok(Channel { name: s.clone(), observable: obs, profile })
            })
            .collect()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Channel {
    pub name: String,
    pub observable: Observable,
    pub profile: HermiteProfile,
}
