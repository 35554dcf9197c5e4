//! Discrete rough-path lifts, their Hölder norms and metric, and the scaled
//! functional lifts `(X^ε, 𝕏^ε)`.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::container::{Container, ContainerError};
use crate::hermite::HermiteProfile;
use crate::noise::{StationaryEnsemble, TimeGrid};
use crate::rng::{stream, tag};

#[derive(Debug, Error)]
pub enum RoughPathError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("lifts live on different grids or dimensions")]
    GridMismatch,
    #[error("fast path covers {available} time units but {required} are needed")]
    HorizonTooShort { required: f64, available: f64 },
    #[error("observable {index} is not centred (c0 = {c0:e})")]
    NotCentred { index: usize, c0: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// How the second-order process was built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftScheme {
    /// Left-point sums `Σ X_{0,t_i} ⊗ δX_i`.
    LeftPoint,
    /// Midpoint sums; the symmetric part is `½ X ⊗ X` exactly.
    Midpoint,
    /// `𝕏 ≡ 0` as a two-parameter process (not reconstructed through Chen).
    Zeroed,
}

/// First-order path with `X_0 = 0` and its second-order process stored as
/// `𝕏_{0,t_i}`; `𝕏_{s,t}` is recovered through Chen's relation, plus
/// `(t − s)·drift`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedPath {
    pub grid: TimeGrid,
    /// `count × d`.
    pub x: Array2<f64>,
    /// `count × d × d`.
    pub xx: Array3<f64>,
    pub d: usize,
    pub scheme: LiftScheme,
    /// `d × d`.
    pub drift: Array2<f64>,
}

fn check_paths(grid: TimeGrid, paths: ArrayView2<'_, f64>) -> Result<usize, RoughPathError> {
    if paths.nrows() != grid.count() {
        return Err(RoughPathError::DimensionMismatch { expected: grid.count(), actual: paths.nrows() });
    }
    if paths.ncols() == 0 {
        return Err(RoughPathError::DimensionMismatch { expected: 1, actual: 0 });
    }
    Ok(paths.ncols())
}

fn lift_with(grid: TimeGrid, paths: ArrayView2<'_, f64>, scheme: LiftScheme) -> Result<LiftedPath, RoughPathError> {
    let d = check_paths(grid, paths)?;
    let n = grid.count();
    let x = &paths - &paths.row(0);
    let mut xx = Array3::zeros((n, d, d));
    if scheme != LiftScheme::Zeroed {
        let w = if scheme == LiftScheme::Midpoint { 0.5 } else { 0.0 };
        for i in 0..n - 1 {
            for a in 0..d {
                let base = x[[i, a]] + w * (x[[i + 1, a]] - x[[i, a]]);
                for b in 0..d {
                    xx[[i + 1, a, b]] = xx[[i, a, b]] + base * (x[[i + 1, b]] - x[[i, b]]);
                }
            }
        }
    }
    Ok(LiftedPath { grid, x, xx, d, scheme, drift: Array2::zeros((d, d)) })
}

/// Left-point lift of a `count × d` path; the path is shifted so `X_0 = 0`.
pub fn canonical_lift(grid: TimeGrid, paths: ArrayView2<'_, f64>) -> Result<LiftedPath, RoughPathError> {
    lift_with(grid, paths, LiftScheme::LeftPoint)
}

/// Midpoint lift: for piecewise-linear interpolation this is the exact
/// iterated integral, so the symmetric part equals `½ X ⊗ X`.
pub fn geometric_lift(grid: TimeGrid, paths: ArrayView2<'_, f64>) -> Result<LiftedPath, RoughPathError> {
    lift_with(grid, paths, LiftScheme::Midpoint)
}

/// Path paired with the identically vanishing second-order process.
pub fn zeroed_lift(grid: TimeGrid, paths: ArrayView2<'_, f64>) -> Result<LiftedPath, RoughPathError> {
    lift_with(grid, paths, LiftScheme::Zeroed)
}

impl LiftedPath {
    pub fn count(&self) -> usize {
        self.grid.count()
    }

    /// `X_{s,t}` for grid indices.
    pub fn increment(&self, s: usize, t: usize) -> Array1<f64> {
        &self.x.row(t) - &self.x.row(s)
    }

    /// `𝕏_{s,t}` for grid indices `s ≤ t`.
    pub fn second_order(&self, s: usize, t: usize) -> Array2<f64> {
        let dt = self.grid.time(t) - self.grid.time(s);
        let mut out = &self.drift * dt;
        if self.scheme == LiftScheme::Zeroed {
            return out;
        }
        let xs = self.x.row(s);
        for a in 0..self.d {
            for b in 0..self.d {
                out[[a, b]] += self.xx[[t, a, b]] - self.xx[[s, a, b]] - xs[a] * (self.x[[t, b]] - self.x[[s, b]]);
            }
        }
        out
    }

    /// `𝕏_{s,t}` by the defining sum over cells in `[s, t)`, without Chen.
    pub fn second_order_direct(&self, s: usize, t: usize) -> Array2<f64> {
        let dt = self.grid.time(t) - self.grid.time(s);
        let mut out = &self.drift * dt;
        if self.scheme == LiftScheme::Zeroed {
            return out;
        }
        let w = if self.scheme == LiftScheme::Midpoint { 0.5 } else { 0.0 };
        for i in s..t {
            for a in 0..self.d {
                let base = self.x[[i, a]] - self.x[[s, a]] + w * (self.x[[i + 1, a]] - self.x[[i, a]]);
                for b in 0..self.d {
                    out[[a, b]] += base * (self.x[[i + 1, b]] - self.x[[i, b]]);
                }
            }
        }
        out
    }

    /// `sup |X|` over the grid, used as the scale for rounding tolerances.
    pub fn scale(&self) -> f64 {
        self.x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Restriction to grid indices `from..`, re-anchored so that it starts at 0.
    pub fn shifted(&self, from: usize) -> Result<Self, RoughPathError> {
        if from + 2 > self.count() {
            return Err(RoughPathError::InvalidArgument("shift leaves fewer than two points".into()));
        }
        let grid = TimeGrid::new(self.grid.step(), self.count() - from).map_err(|e| RoughPathError::InvalidArgument(e.to_string()))?;
        let mut out = lift_with(grid, self.x.slice(s![from.., ..]), self.scheme)?;
        out.drift = self.drift.clone();
        Ok(out)
    }

    pub fn to_container(&self) -> Result<Container, ContainerError> {
        let mut meta = Map::new();
        meta.insert("step".into(), Value::from(self.grid.step()));
        meta.insert("count".into(), Value::from(self.grid.count()));
        meta.insert("d".into(), Value::from(self.d));
        meta.insert("scheme".into(), serde_json::to_value(self.scheme)?);
        let mut c = Container::new(meta);
        let (n, d) = (self.count(), self.d);
        c.push_block("x", vec![n, d], self.x.iter().copied().collect())?;
        c.push_block("xx", vec![n, d, d], self.xx.iter().copied().collect())?;
        c.push_block("drift", vec![d, d], self.drift.iter().copied().collect())?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self, ContainerError> {
        let bad = |k: &str| ContainerError::Header(serde::de::Error::custom(format!("missing or invalid `{k}`")));
        let step = c.meta.get("step").and_then(Value::as_f64).ok_or_else(|| bad("step"))?;
        let count = c.meta.get("count").and_then(Value::as_u64).ok_or_else(|| bad("count"))? as usize;
        let d = c.meta.get("d").and_then(Value::as_u64).ok_or_else(|| bad("d"))? as usize;
        let scheme: LiftScheme = serde_json::from_value(c.meta.get("scheme").cloned().unwrap_or(Value::Null))?;
        let grid = TimeGrid::new(step, count).map_err(|_| bad("grid"))?;
        let x = Array2::from_shape_vec((count, d), c.block("x")?.data.clone()).map_err(|_| bad("x"))?;
        let xx = Array3::from_shape_vec((count, d, d), c.block("xx")?.data.clone()).map_err(|_| bad("xx"))?;
        let drift = Array2::from_shape_vec((d, d), c.block("drift")?.data.clone()).map_err(|_| bad("drift"))?;
        Ok(Self { grid, x, xx, d, scheme, drift })
    }
}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn euclid(v: &Array1<f64>) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Maximum entry of `𝕏_{s,t} − 𝕏_{s,u} − 𝕏_{u,t} − X_{s,u} ⊗ X_{u,t}` over
/// seeded random triples `s < u < t`.
pub fn chen_defect(lift: &LiftedPath, sample_triples: usize, seed: u64) -> f64 {
    let n = lift.count();
    if n < 3 {
        return 0.0;
    }
    let mut rng = stream(seed, tag::PAIRS, 0);
    let mut worst = 0.0f64;
    for _ in 0..sample_triples {
        let mut idx = [rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n)];
        idx.sort_unstable();
        let [s, u, t] = idx;
        let st = lift.second_order(s, t);
        let su = lift.second_order(s, u);
        let ut = lift.second_order(u, t);
        let xsu = lift.increment(s, u);
        let xut = lift.increment(u, t);
        for a in 0..lift.d {
            for b in 0..lift.d {
                let defect = st[[a, b]] - su[[a, b]] - ut[[a, b]] - xsu[a] * xut[b];
                worst = worst.max(defect.abs());
            }
        }
    }
    worst
}

/// Dyadic pairs `(j 2^k, (j+1) 2^k)`, the full pair, then `budget` seeded
/// random pairs. A larger budget extends the same sequence.
pub fn pair_schedule(count: usize, budget: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    let mut gap = 1;
    while gap < count {
        pairs.extend((0..).map(|j| (j * gap, (j + 1) * gap)).take_while(|&(_, t)| t < count));
        gap *= 2;
    }
    pairs.push((0, count - 1));
    let mut rng = stream(seed, tag::PAIRS, 1);
    for _ in 0..budget {
        let a = rng.random_range(0..count);
        let b = rng.random_range(0..count);
        if a != b {
            pairs.push((a.min(b), a.max(b)));
        }
    }
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub alpha: f64,
    /// `sup |X_{s,t}| / |t − s|^α`.
    pub first_order_norm: f64,
    /// `sup sqrt(|𝕏_{s,t}| / |t − s|^{2α})`.
    pub second_order_norm: f64,
    pub pair_budget: usize,
    pub seed: u64,
}

pub fn holder_norm(lift: &LiftedPath, alpha: f64, pair_budget: usize, seed: u64) -> Result<HolderReport, RoughPathError> {
    if !(alpha > 1.0 / 3.0 && alpha < 1.0) {
        return Err(RoughPathError::InvalidArgument(format!("alpha {alpha} outside (1/3, 1)")));
    }
    let (first, second) = pair_schedule(lift.count(), pair_budget, seed)
        .into_par_iter()
        .map(|(s, t)| {
            let dt = lift.grid.time(t) - lift.grid.time(s);
            let f = euclid(&lift.increment(s, t)) / dt.powf(alpha);
            let g = (frobenius(&lift.second_order(s, t)) / dt.powf(2.0 * alpha)).sqrt();
            (f, g)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    Ok(HolderReport { alpha, first_order_norm: first, second_order_norm: second, pair_budget, seed })
}

/// The two suprema of the inhomogeneous `α`-Hölder rough-path metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoughDistance {
    pub first_order: f64,
    pub second_order: f64,
}

impl RoughDistance {
    pub fn value(&self) -> f64 {
        self.first_order + self.second_order
    }
}

pub fn rough_distance_parts(
    a: &LiftedPath,
    b: &LiftedPath,
    alpha: f64,
    pair_budget: usize,
    seed: u64,
) -> Result<RoughDistance, RoughPathError> {
    if a.grid != b.grid || a.d != b.d {
        return Err(RoughPathError::GridMismatch);
    }
    let (first, second) = pair_schedule(a.count(), pair_budget, seed)
        .into_par_iter()
        .map(|(s, t)| {
            let dt = a.grid.time(t) - a.grid.time(s);
            let f = euclid(&(a.increment(s, t) - b.increment(s, t))) / dt.powf(alpha);
            let g = frobenius(&(a.second_order(s, t) - b.second_order(s, t))) / dt.powf(2.0 * alpha);
            (f, g)
        })
        .reduce(|| (0.0, 0.0), |x, y| (x.0.max(y.0), x.1.max(y.1)));
    Ok(RoughDistance { first_order: first, second_order: second })
}

pub fn rough_distance(a: &LiftedPath, b: &LiftedPath, alpha: f64, pair_budget: usize, seed: u64) -> Result<f64, RoughPathError> {
    rough_distance_parts(a, b, alpha, pair_budget, seed).map(|r| r.value())
}

/// `𝕏_{s,t} ↦ 𝕏_{s,t} + (t − s) A`.
pub fn add_area_drift(lift: &LiftedPath, a: &Array2<f64>) -> Result<LiftedPath, RoughPathError> {
    if a.dim() != (lift.d, lift.d) {
        return Err(RoughPathError::DimensionMismatch { expected: lift.d, actual: a.nrows() });
    }
    let mut out = lift.clone();
    out.drift = &out.drift + a;
    Ok(out)
}

/// Slow-time layout of a scaled functional: fast cells per slow point and
/// number of slow points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlowGrid {
    pub fast_cells: usize,
    pub stride: usize,
    pub grid: TimeGrid,
}

impl SlowGrid {
    /// `t_max / ε` fast time units on a fast grid of step `fast_step`,
    /// reported every `stride` fast cells.
    pub fn new(fast_step: f64, epsilon: f64, t_max: f64, stride: usize) -> Result<Self, RoughPathError> {
        if !(epsilon > 0.0 && t_max > 0.0 && fast_step > 0.0) || stride == 0 {
            return Err(RoughPathError::InvalidArgument("epsilon, t_max, step and stride must be positive".into()));
        }
        let cells = t_max / (epsilon * fast_step);
        let fast_cells = cells.round() as usize;
        if (cells - fast_cells as f64).abs() > 1e-6 * cells.max(1.0) || fast_cells == 0 {
            return Err(RoughPathError::InvalidArgument(format!(
                "t_max/ε = {} is not a whole number of fast steps {fast_step}",
                t_max / epsilon
            )));
        }
        if fast_cells % stride != 0 {
            return Err(RoughPathError::InvalidArgument(format!("stride {stride} does not divide {fast_cells} fast cells")));
        }
        let grid = TimeGrid::new(epsilon * fast_step * stride as f64, fast_cells / stride + 1)
            .map_err(|e| RoughPathError::InvalidArgument(e.to_string()))?;
        Ok(Self { fast_cells, stride, grid })
    }
}

fn check_profiles(profiles: &[HermiteProfile], alphas: &[f64]) -> Result<(), RoughPathError> {
    if profiles.len() != alphas.len() || profiles.is_empty() {
        return Err(RoughPathError::DimensionMismatch { expected: profiles.len(), actual: alphas.len() });
    }
    for (index, p) in profiles.iter().enumerate() {
        if !p.is_centred(1e-10) {
            return Err(RoughPathError::NotCentred { index, c0: p.c(0) });
        }
    }
    Ok(())
}

/// `X^{k,ε}_t = α_k ε ∫₀^{t/ε} G_k(y_r) dr` by the trapezoidal rule on the
/// fast grid, sampled on `slow.grid` (`count × d`).
pub fn scaled_functional_path(
    fast: ArrayView1<'_, f64>,
    fast_step: f64,
    profiles: &[HermiteProfile],
    epsilon: f64,
    alphas: &[f64],
    slow: &SlowGrid,
) -> Result<Array2<f64>, RoughPathError> {
    check_profiles(profiles, alphas)?;
    if fast.len() < slow.fast_cells + 1 {
        return Err(RoughPathError::HorizonTooShort {
            required: slow.fast_cells as f64 * fast_step,
            available: (fast.len().max(1) - 1) as f64 * fast_step,
        });
    }
    let d = profiles.len();
    let mut out = Array2::zeros((slow.grid.count(), d));
    for (k, (p, a)) in profiles.iter().zip(alphas).enumerate() {
        let w = 0.5 * a * epsilon * fast_step;
        let mut acc = 0.0;
        let mut prev = p.synthesize(fast[0]);
        for n in 1..=slow.fast_cells {
            let cur = p.synthesize(fast[n]);
            acc += w * (prev + cur);
            prev = cur;
            if n % slow.stride == 0 {
                out[[n / slow.stride, k]] = acc;
            }
        }
    }
    Ok(out)
}

/// Canonical lift of [`scaled_functional_path`].
pub fn scaled_functional_lift_path(
    fast: ArrayView1<'_, f64>,
    fast_step: f64,
    profiles: &[HermiteProfile],
    epsilon: f64,
    alphas: &[f64],
    slow: &SlowGrid,
) -> Result<LiftedPath, RoughPathError> {
    let x = scaled_functional_path(fast, fast_step, profiles, epsilon, alphas, slow)?;
    canonical_lift(slow.grid, x.view())
}

/// One lift per ensemble path, on the slow grid with `stride` fast cells per point.
pub fn scaled_functional_lift(
    ensemble: &StationaryEnsemble,
    profiles: &[HermiteProfile],
    epsilon: f64,
    alphas: &[f64],
    t_max: f64,
    stride: usize,
) -> Result<Vec<LiftedPath>, RoughPathError> {
    let slow = SlowGrid::new(ensemble.grid.step(), epsilon, t_max, stride)?;
    (0..ensemble.n_paths())
        .into_par_iter()
        .map(|i| scaled_functional_lift_path(ensemble.path(i), ensemble.grid.step(), profiles, epsilon, alphas, &slow))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{sample_fbm, sample_fou, FouMethod, Hurst};
    use crate::stats::variance_with_se;
    use ndarray::{array, Axis};
    use proptest::prelude::{prop, prop_assert, proptest, ProptestConfig};

    fn grid(step: f64, count: usize) -> TimeGrid {
        TimeGrid::new(step, count).unwrap()
    }

    fn bm_lift(seed: u64, count: usize) -> LiftedPath {
        let g = grid(1.0 / (count - 1) as f64, count);
        let inc = sample_fbm(TimeGrid::new(g.step(), count - 1).unwrap(), Hurst::new(0.5).unwrap(), 2, seed).unwrap();
        let mut x = Array2::zeros((count, 2));
        for k in 0..2 {
            for i in 1..count {
                x[[i, k]] = x[[i - 1, k]] + inc.values[[k, i - 1]];
            }
        }
        canonical_lift(g, x.view()).unwrap()
    }

    #[test]
    fn linear_path_area_converges_at_first_order() {
        let mut errs = Vec::new();
        for n in [11usize, 101, 1001] {
            let g = grid(1.0 / (n - 1) as f64, n);
            let x = Array2::from_shape_fn((n, 1), |(i, _)| g.time(i));
            let l = canonical_lift(g, x.view()).unwrap();
            errs.push((l.xx[[n - 1, 0, 0]] - 0.5).abs());
        }
        for w in errs.windows(2) {
            assert!((w[0] / w[1] - 10.0).abs() < 0.5, "{errs:?}");
        }
    }

    #[test]
    fn constant_path_has_no_area() {
        let g = grid(0.1, 6);
        let l = canonical_lift(g, Array2::from_elem((6, 2), 3.0).view()).unwrap();
        assert!(l.xx.iter().all(|&v| v == 0.0));
        assert!(l.x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_mismatched_grid() {
        let g = grid(0.1, 6);
        assert!(matches!(
            canonical_lift(g, Array2::zeros((5, 1)).view()),
            Err(RoughPathError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn chen_reconstruction_matches_direct_sums() {
        let l = bm_lift(3, 257);
        for (s, t) in [(0, 256), (17, 90), (100, 101), (5, 5)] {
            let a = l.second_order(s, t);
            let b = l.second_order_direct(s, t);
            assert!((&a - &b).iter().all(|v| v.abs() < 1e-13), "{s},{t}");
        }
    }

    #[test]
    fn chen_defect_examples() {
        let l = bm_lift(4, 513);
        let scale = l.scale().powi(2);
        assert!(chen_defect(&l, 2000, 1) <= 1e-12 * scale);
        assert!(chen_defect(&l.shifted(37).unwrap(), 2000, 1) <= 1e-12 * scale);
        let z = zeroed_lift(l.grid, l.x.view()).unwrap();
        let d = chen_defect(&z, 2000, 1);
        assert!(d > 1e-3, "{d}");
        // Exactly the largest |X_{s,u} ⊗ X_{u,t}| over the same triples.
        let mut rng = stream(1, tag::PAIRS, 0);
        let mut want = 0.0f64;
        for _ in 0..2000 {
            let n = l.count();
            let mut idx = [rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n)];
            idx.sort_unstable();
            let (a, b) = (l.increment(idx[0], idx[1]), l.increment(idx[1], idx[2]));
            for i in 0..2 {
                for j in 0..2 {
                    want = want.max((a[i] * b[j]).abs());
                }
            }
        }
        assert_eq!(d, want);
        let drifted = add_area_drift(&l, &array![[0.0, 2.0], [-2.0, 0.5]]).unwrap();
        assert!(chen_defect(&drifted, 2000, 1) <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn drift_rejects_wrong_shape_and_zero_is_identity() {
        let l = bm_lift(5, 65);
        assert!(add_area_drift(&l, &Array2::zeros((3, 3))).is_err());
        assert_eq!(add_area_drift(&l, &Array2::zeros((2, 2))).unwrap(), l);
    }

    #[test]
    fn holder_norm_examples() {
        let g = grid(1.0 / 1024.0, 1025);
        let x = Array2::from_shape_fn((1025, 1), |(i, _)| g.time(i));
        let r = holder_norm(&canonical_lift(g, x.view()).unwrap(), 0.5, 1000, 1).unwrap();
        assert!((r.first_order_norm - 1.0).abs() < 1e-12);
        let zero = canonical_lift(g, Array2::zeros((1025, 1)).view()).unwrap();
        let r = holder_norm(&zero, 0.45, 1000, 1).unwrap();
        assert_eq!((r.first_order_norm, r.second_order_norm), (0.0, 0.0));
        assert!(holder_norm(&zero, 0.3, 10, 1).is_err());
    }

    #[test]
    fn holder_norm_is_stable_across_seeds_and_monotone_in_budget() {
        let l = bm_lift(6, 4097);
        let norms: Vec<f64> = (0..4).map(|s| holder_norm(&l, 0.45, 1 << 14, s).unwrap().first_order_norm).collect();
        let lo = norms.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = norms.iter().cloned().fold(0.0, f64::max);
        assert!(hi / lo < 1.2, "{norms:?}");
        let small = holder_norm(&l, 0.45, 1000, 9).unwrap();
        let large = holder_norm(&l, 0.45, 4000, 9).unwrap();
        assert!(large.first_order_norm >= small.first_order_norm);
        assert!(large.second_order_norm >= small.second_order_norm);
        // Different Brownian paths give comparable norms.
        let other = holder_norm(&bm_lift(7, 4097), 0.45, 1 << 14, 0).unwrap().first_order_norm;
        assert!(other.is_finite() && other > 0.0);
    }

    #[test]
    fn distance_examples() {
        let a = bm_lift(8, 257);
        assert_eq!(rough_distance(&a, &a, 0.4, 500, 2).unwrap(), 0.0);
        let c = 0.3;
        let mut shifted = a.x.clone();
        for (i, mut row) in shifted.axis_iter_mut(Axis(0)).enumerate() {
            row[1] += c * a.grid.time(i);
        }
        let b = canonical_lift(a.grid, shifted.view()).unwrap();
        let ab = rough_distance_parts(&a, &b, 0.4, 500, 2).unwrap();
        let ba = rough_distance_parts(&b, &a, 0.4, 500, 2).unwrap();
        assert_eq!(ab, ba);
        assert!((ab.first_order - c * a.grid.horizon().powf(0.6)).abs() < 1e-12, "{ab:?}");
        let other = bm_lift(8, 129);
        assert!(matches!(rough_distance(&a, &other, 0.4, 10, 1), Err(RoughPathError::GridMismatch)));
    }

    #[test]
    fn container_roundtrip() {
        let l = add_area_drift(&bm_lift(9, 33), &array![[0.0, 1.0], [-1.0, 0.0]]).unwrap();
        let mut bytes = Vec::new();
        l.to_container().unwrap().write_to(&mut bytes).unwrap();
        let back = LiftedPath::from_container(&Container::read_from(&bytes[..]).unwrap()).unwrap();
        assert_eq!(back, l);
    }

    #[test]
    fn scaled_functional_examples() {
        let g = TimeGrid::new(0.125, 8001).unwrap();
        let e = sample_fou(g, Hurst::new(0.7).unwrap(), 3, 1, FouMethod::ExactCovariance).unwrap();
        let zero = HermiteProfile::from_coeffs(vec![0.0, 0.0]);
        let lifts = scaled_functional_lift(&e, &[zero], 1e-3, &[1.0], 1.0, 8).unwrap();
        assert!(lifts.iter().all(|l| l.x.iter().all(|&v| v == 0.0)));
        let h2 = HermiteProfile::from_coeffs(vec![0.0, 0.0, 1.0]);
        let lifts = scaled_functional_lift(&e, &[h2.clone()], 1e-3, &[1e-3f64.powf(-0.5)], 1.0, 8).unwrap();
        for l in &lifts {
            let n = l.count();
            // Left sums: 𝕏_{0,t} + ½Σ(δX)² = ½X_{0,t}².
            let qv: f64 = (1..n).map(|i| (l.x[[i, 0]] - l.x[[i - 1, 0]]).powi(2)).sum();
            let lhs = l.xx[[n - 1, 0, 0]] + 0.5 * qv;
            assert!((lhs - 0.5 * l.x[[n - 1, 0]].powi(2)).abs() < 1e-12 * (1.0 + lhs.abs()));
        }
        assert!(matches!(
            scaled_functional_lift(&e, &[h2.clone()], 1e-4, &[1.0], 1.0, 8),
            Err(RoughPathError::HorizonTooShort { .. })
        ));
        let uncentred = HermiteProfile::from_coeffs(vec![0.5, 1.0]);
        assert!(matches!(
            scaled_functional_lift(&e, &[uncentred], 1e-3, &[1.0], 1.0, 8),
            Err(RoughPathError::NotCentred { index: 0, .. })
        ));
    }

    #[test]
    fn ou_functional_variance_matches_constant() {
        // G = H1 on the OU process: Var(X^ε_1) → 2∫₀^∞ e^{−s} ds = 2.
        let eps = 1e-3;
        let g = TimeGrid::new(0.125, 8001).unwrap();
        let e = sample_fou(g, Hurst::new(0.5).unwrap(), 10_000, 12, FouMethod::ExactCovariance).unwrap();
        let h1 = HermiteProfile::from_coeffs(vec![0.0, 1.0]);
        let slow = SlowGrid::new(0.125, eps, 1.0, 8000).unwrap();
        let ends: Vec<f64> = (0..e.n_paths())
            .into_par_iter()
            .map(|i| scaled_functional_path(e.path(i), 0.125, &[h1.clone()], eps, &[eps.powf(-0.5)], &slow).unwrap()[[1, 0]])
            .collect();
        let (v, se) = variance_with_se(&ends);
        // Finite-horizon value 2(1 − ε(1 − e^{−1/ε})) differs from 2 by 2ε.
        assert!((v - 2.0).abs() < 3.0 * se + 2.0 * eps, "{v} ± {se}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn discrete_identities_hold_for_arbitrary_paths(
            vals in prop::collection::vec(-10.0f64..10.0, 12..60),
            s_frac in 0.0f64..1.0,
            t_frac in 0.0f64..1.0,
        ) {
            let n = vals.len() / 2;
            let g = grid(0.1, n);
            let x = Array2::from_shape_vec((n, 2), vals[..2 * n].to_vec()).unwrap();
            let l = canonical_lift(g, x.view()).unwrap();
            let m = geometric_lift(g, x.view()).unwrap();
            let (mut s, mut t) = (((n - 1) as f64 * s_frac) as usize, ((n - 1) as f64 * t_frac) as usize);
            if s > t { std::mem::swap(&mut s, &mut t); }
            let scale = 1.0 + l.scale().powi(2);
            prop_assert!(chen_defect(&l, 64, 3) <= 1e-12 * scale);
            prop_assert!(chen_defect(&m, 64, 3) <= 1e-12 * scale);
            for i in 0..2 {
                let xst = l.x[[t, i]] - l.x[[s, i]];
                let qv: f64 = (s..t).map(|r| (l.x[[r + 1, i]] - l.x[[r, i]]).powi(2)).sum();
                prop_assert!((l.second_order(s, t)[[i, i]] + 0.5 * qv - 0.5 * xst * xst).abs() <= 1e-12 * scale);
                prop_assert!((m.second_order(s, t)[[i, i]] - 0.5 * xst * xst).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn distance_is_a_pseudometric(
            a in prop::collection::vec(-3.0f64..3.0, 20),
            b in prop::collection::vec(-3.0f64..3.0, 20),
            c in prop::collection::vec(-3.0f64..3.0, 20),
        ) {
            let g = grid(0.05, 10);
            let lift = |v: &Vec<f64>| canonical_lift(g, Array2::from_shape_vec((10, 2), v.clone()).unwrap().view()).unwrap();
            let (la, lb, lc) = (lift(&a), lift(&b), lift(&c));
            let ab = rough_distance(&la, &lb, 0.4, 64, 5).unwrap();
            let ba = rough_distance(&lb, &la, 0.4, 64, 5).unwrap();
            let ac = rough_distance(&la, &lc, 0.4, 64, 5).unwrap();
            let cb = rough_distance(&lc, &lb, 0.4, 64, 5).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
            prop_assert!(ab <= ac + cb + 1e-12 * (1.0 + ab));
        }
    }
}
