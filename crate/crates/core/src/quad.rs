//! Adaptive Gauss–Kronrod quadrature (7/15 pair) and trapezoid helpers.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("quadrature on [{a}, {b}] did not reach tolerance: estimate {estimate:e}, error {error:e}")]
    NotConverged { a: f64, b: f64, estimate: f64, error: f64 },
    #[error("integrand returned a non-finite value at x = {x}")]
    NonFinite { x: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<Integral, QuadError> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    if !fc.is_finite() {
        return Err(QuadError::NonFinite { x: center });
    }
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let (xl, xr) = (center - dx, center + dx);
        let (fl, fr) = (f(xl), f(xr));
        if !fl.is_finite() {
            return Err(QuadError::NonFinite { x: xl });
        }
        if !fr.is_finite() {
            return Err(QuadError::NonFinite { x: xr });
        }
        kronrod += w * (fl + fr);
        // Gauss nodes sit at the odd Kronrod indices.
        if j % 2 == 1 {
            gauss += WG[j / 2] * (fl + fr);
        }
    }
    Ok(Integral {
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    })
}

struct Panel {
    a: f64,
    b: f64,
    est: Integral,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.est.error == other.est.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.est.error.total_cmp(&other.est.error)
    }
}

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_panels: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-13, rel: 1e-11, max_panels: 2000 }
    }
}

/// Globally adaptive quadrature on a finite interval: the panel with the
/// largest error estimate is bisected until `error <= max(abs, rel*|value|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<Integral, QuadError> {
    if a == b {
        return Ok(Integral { value: 0.0, error: 0.0 });
    }
    let first = gk15(&f, a, b)?;
    let mut heap = BinaryHeap::new();
    let mut total = first;
    heap.push(Panel { a, b, est: first });
    while total.error > tol.abs.max(tol.rel * total.value.abs()) {
        if heap.len() >= tol.max_panels {
            return Err(QuadError::NotConverged { a, b, estimate: total.value, error: total.error });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval no longer splittable in floating point.
            heap.push(worst);
            return Err(QuadError::NotConverged { a, b, estimate: total.value, error: total.error });
        }
        let left = gk15(&f, worst.a, mid)?;
        let right = gk15(&f, mid, worst.b)?;
        total.value += left.value + right.value - worst.est.value;
        total.error += left.error + right.error - worst.est.error;
        heap.push(Panel { a: worst.a, b: mid, est: left });
        heap.push(Panel { a: mid, b: worst.b, est: right });
    }
    // Re-sum to shed accumulated update rounding.
    let (value, error) = heap.iter().fold((0.0, 0.0), |(v, e), p| (v + p.est.value, e + p.est.error));
    Ok(Integral { value, error })
}

/// Integrates over consecutive breakpoints, adding values and errors.
pub fn integrate_pieces<F: Fn(f64) -> f64>(f: F, breaks: &[f64], tol: Tolerance) -> Result<Integral, QuadError> {
    let mut out = Integral { value: 0.0, error: 0.0 };
    for w in breaks.windows(2) {
        let piece = integrate(&f, w[0], w[1], tol)?;
        out.value += piece.value;
        out.error += piece.error;
    }
    Ok(out)
}

/// Composite trapezoid rule on uniformly spaced samples.
pub fn trapezoid(values: &[f64], step: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => step * (0.5 * (values[0] + values[n - 1]) + values[1..n - 1].iter().sum::<f64>()),
    }
}

/// Running trapezoid integral: `out[i] = ∫_0^{t_i}`, `out[0] = 0`.
pub fn cumulative_trapezoid(values: &[f64], step: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    if !values.is_empty() {
        out.push(0.0);
    }
    for w in values.windows(2) {
        acc += 0.5 * step * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(|x| x.powi(5) - 2.0 * x, 0.0, 2.0, Tolerance::default()).unwrap();
        assert!((r.value - (64.0 / 6.0 - 4.0)).abs() < 1e-13);
    }

    #[test]
    fn endpoint_singularity() {
        // ∫_0^1 x^{-1/2} dx = 2
        let r = integrate(|x| x.powf(-0.5), 0.0, 1.0, Tolerance { abs: 1e-10, rel: 1e-10, max_panels: 4000 }).unwrap();
        assert!((r.value - 2.0).abs() < 1e-8, "{}", r.value);
    }

    #[test]
    fn exponential_tail() {
        let r = integrate(|x| (-x).exp(), 0.0, 50.0, Tolerance::default()).unwrap();
        assert!((r.value - (1.0 - (-50.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_is_additive() {
        let v: Vec<f64> = (0..=20).map(|i| (i as f64 * 0.3).sin()).collect();
        let whole = trapezoid(&v, 0.1);
        let split = trapezoid(&v[..=7], 0.1) + trapezoid(&v[7..], 0.1);
        assert!((whole - split).abs() < 1e-15);
        let cum = cumulative_trapezoid(&v, 0.1);
        assert!((cum[20] - whole).abs() < 1e-14);
    }
}
