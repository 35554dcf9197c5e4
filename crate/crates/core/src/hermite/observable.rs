//! Observables `G: ℝ → ℝ` given as Hermite sums, closures or tables.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use super::{hermite_sum, HermiteError};

/// Scalar observable of the fast process.
#[derive(Clone)]
pub enum Observable {
    /// `Σ c_l H_l(x)` with `coeffs[l] = c_l`.
    Hermite(Vec<f64>),
    /// `sign(x)` with `sign(0) = 0`.
    Sign,
    Closure(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    Tabulated(MonotoneSpline),
}

impl Observable {
    pub fn hermite(coeffs: Vec<f64>) -> Self {
        Self::Hermite(coeffs)
    }

    /// Pure `H_l`.
    pub fn h(l: usize) -> Self {
        let mut c = vec![0.0; l + 1];
        c[l] = 1.0;
        Self::Hermite(c)
    }

    pub fn closure(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Closure(Arc::new(f))
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Hermite(c) => hermite_sum(c, x),
            Self::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Self::Closure(f) => f(x),
            Self::Tabulated(s) => s.eval(x),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Hermite(c) if c.iter().all(|&v| v == 0.0))
    }
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Hermite(c) => f.debug_tuple("Hermite").field(c).finish(),
            Self::Sign => f.write_str("Sign"),
            Self::Closure(_) => f.write_str("Closure(..)"),
            Self::Tabulated(s) => f.debug_tuple("Tabulated").field(&s.xs.len()).finish(),
        }
    }
}

/// Parses sums such as `H2`, `H2+H3`, `0.5*H1 - 2*H3`, `0` or `sign`.
impl FromStr for Observable {
    type Err = HermiteError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || HermiteError::ObservableSyntax(s.to_string());
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if compact.eq_ignore_ascii_case("sign") {
            return Ok(Self::Sign);
        }
        if compact == "0" {
            return Ok(Self::Hermite(vec![0.0]));
        }
        if compact.is_empty() {
            return Err(bad());
        }
        let mut coeffs: Vec<f64> = Vec::new();
        let mut rest = compact.as_str();
        while !rest.is_empty() {
            let (sign, body) = match rest.as_bytes()[0] {
                b'+' => (1.0, &rest[1..]),
                b'-' => (-1.0, &rest[1..]),
                _ if coeffs.is_empty() => (1.0, rest),
                _ => return Err(bad()),
            };
            if body.is_empty() {
                return Err(bad());
            }
            let end = body
                .char_indices()
                .skip(1)
                .find(|&(i, c)| matches!(c, '+' | '-') && !body[..i].ends_with(['e', 'E']))
                .map_or(body.len(), |(i, _)| i);
            let term = &body[..end];
            rest = &body[end..];
            let (scale, name) = match term.split_once('*') {
                Some((c, n)) => (c.parse::<f64>().map_err(|_| bad())?, n),
                None => (1.0, term),
            };
            let degree: usize = name
                .strip_prefix(['H', 'h'])
                .ok_or_else(bad)?
                .parse()
                .map_err(|_| bad())?;
            if degree > super::MAX_DEGREE {
                return Err(HermiteError::DegreeTooLarge(degree));
            }
            if coeffs.len() <= degree {
                coeffs.resize(degree + 1, 0.0);
            }
            coeffs[degree] += sign * scale;
        }
        Ok(Self::Hermite(coeffs))
    }
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch–Carlson slopes),
/// extended by constants outside the table.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneSpline {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, HermiteError> {
        let n = xs.len();
        if n < 2 || ys.len() != n || xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(HermiteError::InvalidTable);
        }
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
        let mut slopes = vec![0.0; n];
        slopes[0] = delta[0];
        slopes[n - 1] = delta[n - 2];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] > 0.0 {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                slopes[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        Ok(Self { xs, ys, slopes })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = self.xs.partition_point(|&v| v <= x) - 1;
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.ys[i]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[i]
            + (-2.0 * t3 + 3.0 * t2) * self.ys[i + 1]
            + (t3 - t2) * h * self.slopes[i + 1]
    }
}
