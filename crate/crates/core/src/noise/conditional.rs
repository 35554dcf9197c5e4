//! Past-measurable / independent split of the fOU and conditional Hermite
//! expectations.

use serde::{Deserialize, Serialize};

use super::{FouKernel, Hurst, NoiseError, TimeGrid};
use crate::hermite::{factorial, HermiteProfile};
use crate::stats::linear_fit;

/// Variances of the measurable and independent parts of `y_s` given `F_{t_k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalSplit {
    pub anchor: usize,
    /// Indexed by grid point `s`; equal to 1 for `s ≤ anchor`.
    pub sigma_bar_sq: Vec<f64>,
    /// Complement; 0 for `s ≤ anchor`.
    pub sigma_tilde_sq: Vec<f64>,
}

/// Split of the unit-variance fOU at `t_anchor`, evaluated on `grid`.
pub fn conditional_split(h: Hurst, grid: TimeGrid, anchor: usize) -> Result<ConditionalSplit, NoiseError> {
    let n = grid.count();
    if anchor >= n {
        return Err(NoiseError::AnchorOutOfRange { anchor, count: n });
    }
    let kernel = FouKernel::new(h)?;
    let ahead = n - 1 - anchor;
    let cells = kernel.cell_masses(grid.step(), ahead)?;
    let far = kernel.mass(ahead as f64 * grid.step(), f64::INFINITY)?;
    let mut tilde = vec![0.0; n];
    let mut bar = vec![1.0; n];
    let mut acc = 0.0;
    for (d, m) in cells.iter().enumerate() {
        acc += m;
        tilde[anchor + d + 1] = acc;
    }
    let mut back = far;
    for d in (1..=ahead).rev() {
        bar[anchor + d] = back;
        back += cells[d - 1];
    }
    Ok(ConditionalSplit { anchor, sigma_bar_sq: bar, sigma_tilde_sq: tilde })
}

/// `E[H_l(a + ỹ)]` for `ỹ ~ N(0, 1 − σ̄²)`, i.e. `σ̄^l H_l(a/σ̄)`.
///
/// Evaluated through the scaled recurrence `P_{l+1} = a P_l − l σ̄² P_{l−1}`,
/// which is exact at `σ̄² = 1` and stable as `σ̄² → 0`. At `σ̄² = 0` the
/// measurable part vanishes and the result is `δ_{l0}`.
pub fn conditional_hermite_expectation(l: usize, sigma_bar_sq: f64, a: f64) -> f64 {
    if sigma_bar_sq <= 0.0 {
        return if l == 0 { 1.0 } else { 0.0 };
    }
    let (mut prev, mut cur) = (1.0, a);
    if l == 0 {
        return prev;
    }
    for k in 1..l {
        let next = a * cur - k as f64 * sigma_bar_sq * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `Σ_l c_l E[H_l(a + ỹ)]`, all terms in one sweep.
pub(crate) fn conditional_sum(coeffs: &[f64], sigma_bar_sq: f64, a: f64) -> f64 {
    if sigma_bar_sq <= 0.0 {
        return coeffs.first().copied().unwrap_or(0.0);
    }
    let mut acc = 0.0;
    let (mut prev, mut cur) = (0.0, 1.0);
    for (l, c) in coeffs.iter().enumerate() {
        acc += c * cur;
        let next = a * cur - l as f64 * sigma_bar_sq * prev;
        prev = cur;
        cur = next;
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailVerdict {
    Finite,
    /// Fitted tail exponent `≥ −1`: the integral diverges.
    Divergent,
}

/// `∫₀^∞ ‖E[G(y_s)|F_0]‖_{L²} ds` split into a quadrature body and a
/// power-law tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryLoss {
    pub body: f64,
    pub tail: f64,
    pub fitted_exponent: f64,
    /// Point where the body stopped: the horizon or where the integrand fell below 1e−10.
    pub truncated_at: f64,
    pub verdict: TailVerdict,
    pub h_star: f64,
}

impl MemoryLoss {
    pub fn value(&self) -> f64 {
        match self.verdict {
            TailVerdict::Finite => self.body + self.tail,
            TailVerdict::Divergent => f64::INFINITY,
        }
    }
}

/// Integrates `sqrt(Σ_l c_l² l! σ̄(s)^{2l})` over `[0, horizon]` on a grid
/// that is uniform near the origin and geometric beyond, then fits the tail.
pub fn memory_loss_integral(profile: &HermiteProfile, h: Hurst, horizon: f64) -> Result<MemoryLoss, NoiseError> {
    let m = match profile.rank {
        Some(m) if m >= 1 => m,
        _ => return Err(NoiseError::RankZero),
    };
    if horizon <= 1.0 {
        return Err(NoiseError::InvalidArgument("horizon must exceed 1".into()));
    }
    let kernel = FouKernel::new(h)?;
    let mut nodes = Vec::new();
    let fine = 1.0 / 32.0;
    let mut s: f64 = 0.0;
    while s < horizon.min(8.0) {
        nodes.push(s);
        s += fine;
    }
    while s < horizon {
        nodes.push(s);
        s *= 1.02;
    }
    nodes.push(horizon);
    let weights: Vec<f64> = profile.coeffs.iter().enumerate().map(|(l, c)| c * c * factorial(l)).collect();
    let norm = |sbar: f64| -> f64 {
        weights.iter().enumerate().skip(1).map(|(l, w)| w * sbar.powi(l as i32)).sum::<f64>().sqrt()
    };
    // σ̄² at each node from backward accumulation of interval masses.
    let mut sbar = vec![0.0; nodes.len()];
    let last = nodes.len() - 1;
    sbar[last] = kernel.mass(nodes[last], f64::INFINITY)?;
    for i in (0..last).rev() {
        sbar[i] = sbar[i + 1] + kernel.mass(nodes[i], nodes[i + 1])?;
    }
    let values: Vec<f64> = sbar.iter().map(|&v| norm(v)).collect();
    let mut body = 0.0;
    let mut stop = last;
    for i in 0..last {
        body += 0.5 * (nodes[i + 1] - nodes[i]) * (values[i] + values[i + 1]);
        if values[i + 1] < 1e-10 {
            stop = i + 1;
            break;
        }
    }
    let t_end = nodes[stop];
    // Power law fitted over the final decade before the stopping point.
    let (xs, ys): (Vec<f64>, Vec<f64>) = (1..=stop)
        .filter(|&i| nodes[i] >= t_end / 10.0 && values[i] > 0.0)
        .map(|i| (nodes[i].ln(), values[i].ln()))
        .unzip();
    let fitted_exponent = if xs.len() >= 3 { linear_fit(&xs, &ys).slope } else { f64::NEG_INFINITY };
    let (verdict, tail) = if fitted_exponent >= -1.0 {
        (TailVerdict::Divergent, f64::INFINITY)
    } else {
        (TailVerdict::Finite, values[stop] * t_end / (-fitted_exponent - 1.0))
    };
    Ok(MemoryLoss { body, tail, fitted_exponent, truncated_at: t_end, verdict, h_star: crate::hermite::h_star(m, h) })
}
