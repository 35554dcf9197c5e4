//! Martingale–coboundary decomposition of additive functionals of the
//! finite-memory Volterra model.
//!
//! Time is measured in unit blocks of `q = 1/Δ` grid cells; block `k` is
//! `[k−1, k]` and anchor `k` is grid index `kq`. For a centred observable
//! `U` with Hermite coefficients `c_l`:
//!
//! * `I(k)` is the trapezoid integral of `U(y)` over block `k`;
//! * `Û(k) = ∫_{k−1}^∞ E[U(y_s)|F_k] ds`, with the conditional mean given
//!   by `Σ_l c_l σ̄^l H_l(ȳ/σ̄)`;
//! * `R(k) = E[Û(k+1)|F_k]`, evaluated by composing two conditionings;
//! * `M_k = Σ_{l=1}^k (Û(l) − R(l−1))`.

use std::cell::RefCell;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::hermite::{cross_covariance, factorial, HermiteProfile};
use crate::noise::conditional::conditional_sum;
use crate::noise::{fou_autocorrelation, Hurst, NoiseError, VolterraEnsemble, VolterraModel};
use crate::quad::{cumulative_trapezoid, integrate_pieces, QuadError, Tolerance};
use crate::stats::{iqr, median};

#[derive(Debug, Error)]
pub enum DecompError {
    #[error("path of {available} grid points is too short; {required} are needed")]
    HorizonTooShort { required: usize, available: usize },
    #[error("correlation integral of chaos {l} diverges (ρ^l decays like s^{exponent})")]
    TailDivergent { l: usize, exponent: f64 },
    #[error("observable is not centred (c_0 = {0})")]
    NotCentred(f64),
    #[error("grid step {0} does not divide a unit block")]
    StepNotUnitFraction(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

/// Grid cells per unit block.
pub fn cells_per_block(step: f64) -> Result<usize, DecompError> {
    let q = (1.0 / step).round();
    if !(q >= 1.0 && (q * step - 1.0).abs() < 1e-12) {
        return Err(DecompError::StepNotUnitFraction(step));
    }
    Ok(q as usize)
}

fn check_centred(profile: &HermiteProfile) -> Result<(), DecompError> {
    if profile.is_centred(1e-12) {
        Ok(())
    } else {
        Err(DecompError::NotCentred(profile.c(0)))
    }
}

/// Trapezoid integrals of `G(path)` over the unit blocks `1..=n_blocks`.
///
/// The observable need not be centred.
pub fn block_integrals(path: &[f64], step: f64, profile: &HermiteProfile, n_blocks: usize) -> Result<Vec<f64>, DecompError> {
    let q = cells_per_block(step)?;
    let required = n_blocks * q + 1;
    if path.len() < required {
        return Err(DecompError::HorizonTooShort { required, available: path.len() });
    }
    let u: Vec<f64> = path[..required].iter().map(|&y| profile.synthesize(y)).collect();
    Ok(block_sums(&u, q, step, n_blocks))
}

fn block_sums(u: &[f64], q: usize, step: f64, n_blocks: usize) -> Vec<f64> {
    (0..n_blocks)
        .map(|b| {
            let w = &u[b * q..=(b + 1) * q];
            step * (0.5 * (w[0] + w[q]) + w[1..q].iter().sum::<f64>())
        })
        .collect()
}

/// Decomposition of one observable along one path.
///
/// Sequences are stored from their first index: `i[k−1] = I(k)`,
/// `u_hat[k−1] = Û(k)`, `m[k−1] = M_k` for `k = 1..=L+1`, and
/// `cond_next[k] = E[Û(k+1)|F_k]` for `k = 0..=L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteFunctionals {
    pub n_blocks: usize,
    pub i: Vec<f64>,
    pub u_hat: Vec<f64>,
    pub cond_next: Vec<f64>,
    pub m: Vec<f64>,
    /// `∫₀^k U(y)` on the full trapezoid grid, `k = 0..=L+1`.
    pub running: Vec<f64>,
}

impl DiscreteFunctionals {
    /// `max_k |Û(k) − I(k) − E[Û(k+1)|F_k]|` over `k = 1..=L`.
    pub fn conditional_identity_violation(&self) -> f64 {
        (1..=self.n_blocks)
            .map(|k| (self.u_hat[k - 1] - self.i[k - 1] - self.cond_next[k]).abs())
            .fold(0.0, f64::max)
    }

    /// `max_k |∫₀^{k−1} U − (M_k − M_1 − Û(k) + Û(1))|` over `k = 1..=L+1`.
    pub fn telescoping_violation(&self) -> f64 {
        (1..=self.n_blocks + 1)
            .map(|k| {
                let rhs = self.m[k - 1] - self.m[0] - self.u_hat[k - 1] + self.u_hat[0];
                (self.running[k - 1] - rhs).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn max_identity_violation(&self) -> f64 {
        self.conditional_identity_violation().max(self.telescoping_violation())
    }
}

/// `M_k = Σ_{l=1}^k (Û(l) − E[Û(l)|F_{l−1}])`, where `cond[l−1]` holds
/// `E[Û(l)|F_{l−1}]`.
pub fn martingale_sequence(u_hat: &[f64], cond: &[f64]) -> Vec<f64> {
    u_hat
        .iter()
        .zip(cond)
        .scan(0.0, |acc, (u, c)| {
            *acc += u - c;
            Some(*acc)
        })
        .collect()
}

/// Path data shared by the per-anchor evaluations.
struct PathView<'a> {
    model: &'a VolterraModel,
    y: Vec<f64>,
    xi: Vec<f64>,
    off: usize,
    q: usize,
}

impl<'a> PathView<'a> {
    fn new(ens: &'a VolterraEnsemble, path: usize) -> Result<Self, DecompError> {
        if path >= ens.ensemble.n_paths() {
            return Err(DecompError::InvalidArgument(format!("path {path} out of range")));
        }
        let model = ens.model.as_ref();
        Ok(Self {
            model,
            y: ens.ensemble.path(path).to_vec(),
            xi: ens.xi.row(path).to_vec(),
            off: ens.offset(),
            q: cells_per_block(model.step)?,
        })
    }

    /// Calls `visit(k, n, ȳ^k_n)` for every anchor `k ≤ k_max` with
    /// `0 < n − kq < J`, where `ȳ^k_n = Σ_{j ≥ n−kq} κ_j ξ_{n−j}`.
    fn for_each_measurable(&self, n_max: usize, k_max: usize, mut visit: impl FnMut(usize, usize, f64)) {
        let kappa = &self.model.kappa;
        let jlen = kappa.len();
        for n in 1..=n_max {
            let mut acc = 0.0;
            for j in (1..jlen).rev() {
                let idx = n + self.off - j;
                acc += kappa[j] * self.xi[idx];
                if j <= n && (n - j) % self.q == 0 {
                    let k = (n - j) / self.q;
                    if k <= k_max {
                        visit(k, n, acc);
                    }
                }
            }
        }
    }
}

/// Evaluates `I`, `Û`, `E[Û(k+1)|F_k]` and `M` for blocks `1..=n_blocks`.
///
/// Needs `(n_blocks + 1)·q + J` grid points.
pub fn decompose(ens: &VolterraEnsemble, path: usize, profile: &HermiteProfile, n_blocks: usize) -> Result<DiscreteFunctionals, DecompError> {
    let mut out = decompose_many(ens, path, &[profile], n_blocks)?;
    Ok(out.pop().expect("one profile"))
}

/// [`decompose`] for several observables sharing one sweep over the path.
pub fn decompose_many(
    ens: &VolterraEnsemble,
    path: usize,
    profiles: &[&HermiteProfile],
    n_blocks: usize,
) -> Result<Vec<DiscreteFunctionals>, DecompError> {
    for p in profiles {
        check_centred(p)?;
    }
    let view = PathView::new(ens, path)?;
    let (q, step) = (view.q, view.model.step);
    let jlen = view.model.memory_len();
    let last_anchor = (n_blocks + 1) * q;
    let required = last_anchor + jlen;
    if view.y.len() < required {
        return Err(DecompError::HorizonTooShort { required, available: view.y.len() });
    }
    let np = profiles.len();
    // tail_direct[p][k] = Σ_{n>kq} e_k(n); tail_composed[p][k] = Σ_{n>kq} E[e_{k+1}(n)|F_k].
    let mut tail_direct = vec![vec![0.0; n_blocks + 2]; np];
    let mut tail_composed = vec![vec![0.0; n_blocks + 1]; np];
    let width = profiles.iter().map(|p| p.coeffs.len()).max().unwrap_or(0);
    let mut scaled = vec![0.0; width];
    view.for_each_measurable(last_anchor + jlen - 1, n_blocks + 1, |k, n, ybar| {
        let d = n - k * q;
        let s2 = view.model.sigma_bar_sq(d);
        let next = (k <= n_blocks && d > q).then(|| view.model.sigma_bar_sq(d - q));
        for (p, profile) in profiles.iter().enumerate() {
            let coeffs = &profile.coeffs;
            let direct = conditional_sum(coeffs, s2, ybar);
            tail_direct[p][k] += direct;
            if k > n_blocks {
                continue;
            }
            match next {
                None => tail_composed[p][k] += direct,
                Some(s2_next) if s2_next > 0.0 => {
                    let s = s2_next.sqrt();
                    let mut pw = 1.0;
                    for (c, out) in coeffs.iter().zip(scaled.iter_mut()) {
                        *out = c * pw;
                        pw *= s;
                    }
                    tail_composed[p][k] += conditional_sum(&scaled[..coeffs.len()], s2 / s2_next, ybar / s);
                }
                Some(_) => {}
            }
        }
    });

    Ok(profiles
        .iter()
        .zip(tail_direct.iter().zip(&tail_composed))
        .map(|(profile, (direct, composed))| {
            let u: Vec<f64> = view.y[..=last_anchor].iter().map(|&y| profile.synthesize(y)).collect();
            let blocks = block_sums(&u, q, step, n_blocks + 1);
            let u_hat: Vec<f64> = (1..=n_blocks + 1)
                .map(|k| {
                    let lo = (k - 1) * q;
                    let measurable = 0.5 * u[lo] + u[lo + 1..=k * q].iter().sum::<f64>();
                    step * (measurable + direct[k])
                })
                .collect();
            let cond_next: Vec<f64> = (0..=n_blocks).map(|k| step * (0.5 * u[k * q] + composed[k])).collect();
            let m = martingale_sequence(&u_hat, &cond_next);
            let cumulative = cumulative_trapezoid(&u, step);
            let running = (0..=n_blocks + 1).map(|k| cumulative[k * q]).collect();
            DiscreteFunctionals { n_blocks, i: blocks, u_hat, cond_next, m, running }
        })
        .collect())
}

/// `Û(k)` truncated at time `horizon`: the trapezoid integral of
/// `E[U(y_s)|F_k]` over `[k−1, max(k, horizon)]`.
///
/// Beyond `k + J·Δ` the integrand vanishes, so any larger horizon gives the
/// full conditional tail.
pub fn conditional_tail(ens: &VolterraEnsemble, path: usize, profile: &HermiteProfile, k: usize, horizon: f64) -> Result<f64, DecompError> {
    check_centred(profile)?;
    if k == 0 {
        return Err(DecompError::InvalidArgument("blocks are numbered from 1".into()));
    }
    let view = PathView::new(ens, path)?;
    let (q, step) = (view.q, view.model.step);
    let jlen = view.model.memory_len();
    let anchor = k * q;
    let end = if horizon.is_finite() { ((horizon / step).round().max(0.0) as usize).max(anchor) } else { usize::MAX };
    let end = end.min(anchor + jlen);
    let last_visited = end.min(anchor + jlen - 1);
    let required = last_visited + 1;
    if view.y.len() < required {
        return Err(DecompError::HorizonTooShort { required, available: view.y.len() });
    }
    let coeffs = &profile.coeffs;
    let measurable = crate::quad::trapezoid(
        &view.y[anchor - q..=anchor].iter().map(|&y| profile.synthesize(y)).collect::<Vec<_>>(),
        step,
    );
    if end == anchor {
        return Ok(measurable);
    }
    let mut e = vec![0.0; end - anchor + 1];
    e[0] = profile.synthesize(view.y[anchor]);
    view.for_each_measurable(last_visited, k, |kk, n, ybar| {
        if kk == k && n > anchor {
            e[n - anchor] = conditional_sum(coeffs, view.model.sigma_bar_sq(n - anchor), ybar);
        }
    });
    Ok(measurable + crate::quad::trapezoid(&e, step))
}

/// Number of unit blocks in `[0, t/ε]`.
pub fn block_count(epsilon: f64, t: f64) -> usize {
    (t / epsilon + 1e-9).floor() as usize
}

/// `Δ(½ρ_G(0) + Σ_{l≥1} ρ_G(l))` with `ρ_G(l) = E[G_i(y_l)G_j(y_0)]` for
/// the discrete model.
pub fn area_constant_discrete(a: &HermiteProfile, b: &HermiteProfile, model: &VolterraModel) -> f64 {
    let half = 0.5 * cross_covariance(a, b, model.autocorrelation(0));
    let rest: f64 = (1..model.memory_len()).map(|l| cross_covariance(a, b, model.autocorrelation(l))).sum();
    model.step * (half + rest)
}

/// Components of the residual of the area lemma on one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaResidual {
    pub epsilon: f64,
    /// `ε ∫₀^{t/ε} ∫₀^s G_i(y_s) G_j(y_r) dr ds`.
    pub double_integral: f64,
    /// `ε Σ_{k=1}^L (M^i_{k+1} − M^i_k) N_k`.
    pub martingale_transform: f64,
    pub area: f64,
    pub err: f64,
    pub identity_violation: f64,
}

/// `Σ_n u_n (Σ_{m<n} v_m + ½ v_n)`: the iterated integral over cells with
/// the diagonal cell split evenly.
pub fn double_integral(u: &[f64], v: &[f64]) -> f64 {
    let mut before = 0.0;
    u.iter()
        .zip(v)
        .map(|(a, b)| {
            let term = a * (before + 0.5 * b);
            before += b;
            term
        })
        .sum()
}

/// `Σ_n u_n Σ_{m<n} v_m`.
pub fn left_double_integral(u: &[f64], v: &[f64]) -> f64 {
    let mut before = 0.0;
    u.iter()
        .zip(v)
        .map(|(a, b)| {
            let term = a * before;
            before += b;
            term
        })
        .sum()
}

fn cell_integrals(path: &[f64], profile: &HermiteProfile, step: f64, cells: usize) -> Vec<f64> {
    let g: Vec<f64> = path[..=cells].iter().map(|&y| profile.synthesize(y)).collect();
    g.windows(2).map(|w| 0.5 * step * (w[0] + w[1])).collect()
}

/// `err(ε) = ε∫∫ G_i G_j − ε Σ (M^i_{k+1} − M^i_k) N_k − t·A^{ij}` on one
/// path, with `A^{ij}` the discrete-model area constant.
pub fn lemma_residual(
    ens: &VolterraEnsemble,
    path: usize,
    gi: &HermiteProfile,
    gj: &HermiteProfile,
    epsilon: f64,
    t: f64,
) -> Result<LemmaResidual, DecompError> {
    if !(epsilon > 0.0 && t > 0.0) {
        return Err(DecompError::InvalidArgument("epsilon and t must be positive".into()));
    }
    let l = block_count(epsilon, t);
    if l == 0 {
        return Err(DecompError::InvalidArgument("t/ε must cover at least one block".into()));
    }
    let mut both = decompose_many(ens, path, &[gi, gj], l)?;
    let fj = both.pop().expect("two profiles");
    let fi = both.pop().expect("two profiles");
    let step = ens.model.step;
    let cells = l * cells_per_block(step)?;
    let y = ens.ensemble.path(path).to_vec();
    let ui = cell_integrals(&y, gi, step, cells);
    let vj = cell_integrals(&y, gj, step, cells);
    let double = epsilon * double_integral(&ui, &vj);
    let transform = epsilon * (1..=l).map(|k| (fi.m[k] - fi.m[k - 1]) * fj.m[k - 1]).sum::<f64>();
    let area = area_constant_discrete(gi, gj, &ens.model);
    Ok(LemmaResidual {
        epsilon,
        double_integral: double,
        martingale_transform: transform,
        area,
        err: double - transform - t * area,
        identity_violation: fi.max_identity_violation().max(fj.max_identity_violation()),
    })
}

/// Ensemble summary of [`lemma_residual`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub epsilon: f64,
    pub n_paths: usize,
    pub median_abs_err: f64,
    pub iqr: f64,
    #[serde(rename = "A_matrix")]
    pub a_matrix: Vec<Vec<f64>>,
    pub identity_max_violation: f64,
}

impl ResidualReport {
    pub fn from_rows(epsilon: f64, rows: &[LemmaResidual], a_matrix: Vec<Vec<f64>>) -> Self {
        let abs: Vec<f64> = rows.iter().map(|r| r.err.abs()).collect();
        Self {
            epsilon,
            n_paths: rows.len(),
            median_abs_err: median(&abs),
            iqr: iqr(&abs),
            a_matrix,
            identity_max_violation: rows.iter().map(|r| r.identity_violation).fold(0.0, f64::max),
        }
    }
}

/// Residuals on every path of `ens`, evaluated in parallel.
pub fn residual_study(
    ens: &VolterraEnsemble,
    gi: &HermiteProfile,
    gj: &HermiteProfile,
    epsilon: f64,
    t: f64,
) -> Result<(ResidualReport, Vec<LemmaResidual>), DecompError> {
    let rows: Vec<LemmaResidual> = (0..ens.ensemble.n_paths())
        .into_par_iter()
        .map(|p| lemma_residual(ens, p, gi, gj, epsilon, t))
        .collect::<Result<_, _>>()?;
    let profiles = [gi, gj];
    let a_matrix = profiles
        .iter()
        .map(|a| profiles.iter().map(|b| area_constant_discrete(a, b, &ens.model)).collect())
        .collect();
    let report = ResidualReport::from_rows(epsilon, &rows, a_matrix);
    Ok((report, rows))
}

const AREA_BODY_END: f64 = 60.0;
const AREA_TAIL_END: f64 = 6.0e4;
const AREA_TAIL_TERMS: usize = 8;

fn area_tol() -> Tolerance {
    Tolerance { abs: 1e-12, rel: 1e-10, max_panels: 4000 }
}

/// Large-`t` expansion of the fOU correlation,
/// `ρ(t) ≈ Σ_{k even ≥ 2} (a)_k t^{a−k} / Γ(a+1)` with `a = 2h` and `(a)_k`
/// the falling factorial.
pub fn fou_autocorrelation_asymptotic(t: f64, h: Hurst) -> f64 {
    let a = 2.0 * h.value();
    let mut falling = 1.0;
    let mut sum = 0.0;
    for k in 0..2 * AREA_TAIL_TERMS {
        falling *= a - k as f64;
        if k % 2 == 1 {
            sum += falling * t.powf(a - (k + 1) as f64);
        }
    }
    sum / gamma(a + 1.0)
}

/// `A^{ij} = ∫₀^∞ E[G_i(y_s) G_j(y_0)] ds = Σ_{l≥1} l! c^i_l c^j_l ∫₀^∞ ρ(s)^l ds`
/// for the stationary fOU.
///
/// The body is integrated by adaptive quadrature up to `s = 60`, the tail
/// with the asymptotic correlation and a closed-form power-law remainder.
pub fn area_constant(a: &HermiteProfile, b: &HermiteProfile, h: Hurst) -> Result<f64, DecompError> {
    check_centred(a)?;
    check_centred(b)?;
    let n = a.coeffs.len().min(b.coeffs.len());
    let weights: Vec<(usize, f64)> = (1..n)
        .map(|l| (l, factorial(l) * a.coeffs[l] * b.coeffs[l]))
        .filter(|&(_, w)| w != 0.0)
        .collect();
    if weights.is_empty() {
        return Ok(0.0);
    }
    let decay = 2.0 * h.value() - 2.0;
    if !h.is_half() {
        if let Some(&(l, _)) = weights.iter().find(|&&(l, _)| l as f64 * decay >= -1.0) {
            return Err(DecompError::TailDivergent { l, exponent: l as f64 * decay });
        }
    }
    let series = |rho: f64| weights.iter().map(|&(l, w)| w * rho.powi(l as i32)).sum::<f64>();

    let body_breaks = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, AREA_BODY_END];
    let failure = RefCell::new(None);
    let body = integrate_pieces(
        |s| match fou_autocorrelation(s, h) {
            Ok(rho) => series(rho),
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                0.0
            }
        },
        &body_breaks,
        area_tol(),
    )?;
    if let Some(e) = failure.into_inner() {
        return Err(e.into());
    }
    if h.is_half() {
        return Ok(body.value);
    }
    let mut tail_breaks = vec![AREA_BODY_END];
    while *tail_breaks.last().expect("nonempty") < AREA_TAIL_END {
        let next = (tail_breaks.last().expect("nonempty") * 2.0).min(AREA_TAIL_END);
        tail_breaks.push(next);
    }
    let tail = integrate_pieces(|s| series(fou_autocorrelation_asymptotic(s, h)), &tail_breaks, area_tol())?;
    let lead = 2.0 * h.value() * (2.0 * h.value() - 1.0) / gamma(2.0 * h.value() + 1.0);
    let remainder: f64 = weights
        .iter()
        .map(|&(l, w)| {
            let p = l as f64 * decay + 1.0;
            w * lead.powi(l as i32) * AREA_TAIL_END.powf(p) / -p
        })
        .sum();
    Ok(body.value + tail.value + remainder)
}
