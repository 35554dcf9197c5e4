//! Gauss–Hermite rules for the standard normal weight.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights with `Σ w_i f(x_i) ≈ E[f(Z)]`, `Z ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Orthonormal Hermite values `ĥ_0(x)..ĥ_{n-1}(x)`, `ĥ_k = H_k/√(k!)`.
pub fn orthonormal_values(n: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    out.push(1.0);
    if n > 1 {
        out.push(x);
    }
    for k in 1..n.saturating_sub(1) {
        let kf = k as f64;
        let next = (x * out[k] - kf.sqrt() * out[k - 1]) / (kf + 1.0).sqrt();
        out.push(next);
    }
    out
}

impl GaussHermite {
    /// `n`-point rule from the eigen-decomposition of the Jacobi matrix,
    /// polished by Newton steps on `ĥ_n` and Christoffel weights.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "rule needs at least one node");
        let jacobi = DMatrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { (i.max(j) as f64).sqrt() } else { 0.0 });
        let eig = SymmetricEigen::new(jacobi);
        let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        nodes.sort_by(f64::total_cmp);
        for x in nodes.iter_mut() {
            for _ in 0..3 {
                let h = orthonormal_values(n + 1, *x);
                // ĥ_n' = √n ĥ_{n−1}
                let step = h[n] / ((n as f64).sqrt() * h[n - 1]);
                if !step.is_finite() {
                    break;
                }
                *x -= step;
                if step.abs() < 1e-15 * x.abs().max(1.0) {
                    break;
                }
            }
        }
        // Enforce exact symmetry about 0.
        for i in 0..n / 2 {
            let m = 0.5 * (nodes[n - 1 - i] - nodes[i]);
            nodes[i] = -m;
            nodes[n - 1 - i] = m;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        let weights = nodes.iter().map(|&x| 1.0 / orthonormal_values(n, x).iter().map(|h| h * h).sum::<f64>()).collect();
        Self { nodes, weights }
    }

    /// Shared rule of size `n`, built once per process.
    pub fn cached(n: usize) -> Arc<Self> {
        static RULES: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
        let rules = RULES.get_or_init(Default::default);
        if let Some(r) = rules.lock().expect("rule cache poisoned").get(&n) {
            return Arc::clone(r);
        }
        let rule = Arc::new(Self::new(n));
        rules.lock().expect("rule cache poisoned").entry(n).or_insert(rule).clone()
    }

    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, w)| w * f(x)).sum()
    }
}
