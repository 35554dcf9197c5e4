//! Integrators for the multiscale ODE and the limiting rough and Young
//! equations, plus the scalar closed-form oracle.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::container::{write_csv, Container, ContainerError};
use crate::hermite::{scaling_alpha, HermiteProfile};
use crate::noise::{Hurst, TimeGrid};
use crate::quad::{integrate, Tolerance};
use crate::roughpath::{LiftedPath, SlowGrid};
use crate::stats::linear_fit;

pub const BLOWUP_NORM: f64 = 1e8;
pub const REFINE_TOL: f64 = 1e-6;
const FD_STEP: f64 = 1e-6;
const MIN_YOUNG_EXPONENT: f64 = 0.55;
/// Upper bound on Euler steps per Young solve.
const MAX_YOUNG_STEPS: usize = 1 << 25;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("state norm {norm:e} exceeded the blow-up threshold at t = {time} (step {step}, state {state:?})")]
    Blowup { time: f64, step: f64, norm: f64, state: Vec<f64> },
    #[error("fast path covers {available} time units but {required} are needed")]
    HorizonTooShort { required: f64, available: f64 },
    #[error("step refinement stalled with successive difference {difference:e}")]
    NoConvergence { difference: f64 },
    #[error("driver Hölder exponent {exponent:.3} is not above {MIN_YOUNG_EXPONENT}")]
    RegularityTooLow { exponent: f64 },
    #[error("vector field vanishes or the target is unreachable near x = {at}")]
    FieldVanishes { at: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

type Map1 = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Smooth map `ℝ^dim → ℝ^dim` with an optional closed-form Jacobian
/// (row-major, `jac[a·dim + b] = ∂f_a/∂x_b`).
#[derive(Clone)]
pub struct VectorField {
    dim: usize,
    f: Arc<Map1>,
    jac: Option<Arc<Map1>>,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField").field("dim", &self.dim).field("closed_form_jacobian", &self.jac.is_some()).finish()
    }
}

impl VectorField {
    pub fn new(dim: usize, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Self { dim, f: Arc::new(f), jac: None }
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.jac = Some(Arc::new(jac));
        self
    }

    /// Scalar field on `ℝ` with derivative.
    pub fn scalar(f: impl Fn(f64) -> f64 + Send + Sync + 'static, df: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(1, move |x, out| out[0] = f(x[0])).with_jacobian(move |x, out| out[0] = df(x[0]))
    }

    pub fn constant(v: Vec<f64>) -> Self {
        let dim = v.len();
        Self::new(dim, move |_, out| out.copy_from_slice(&v)).with_jacobian(|_, out| out.fill(0.0))
    }

    pub fn zero(dim: usize) -> Self {
        Self::constant(vec![0.0; dim])
    }

    /// `x ↦ M x`.
    pub fn linear(m: Array2<f64>) -> Self {
        let dim = m.nrows();
        assert_eq!(m.ncols(), dim, "linear field needs a square matrix");
        let flat: Vec<f64> = m.iter().copied().collect();
        let m2 = flat.clone();
        Self::new(dim, move |x, out| {
            for (a, o) in out.iter_mut().enumerate() {
                *o = (0..dim).map(|b| flat[a * dim + b] * x[b]).sum();
            }
        })
        .with_jacobian(move |_, out| out.copy_from_slice(&m2))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }

    /// Closed-form Jacobian when given, central differences at step 1e−6 otherwise.
    pub fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        if let Some(j) = &self.jac {
            return j(x, out);
        }
        let n = self.dim;
        let mut xp = x.to_vec();
        let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
        for b in 0..n {
            let h = FD_STEP * x[b].abs().max(1.0);
            xp[b] = x[b] + h;
            self.eval(&xp, &mut fp);
            xp[b] = x[b] - h;
            self.eval(&xp, &mut fm);
            xp[b] = x[b];
            for a in 0..n {
                out[a * n + b] = (fp[a] - fm[a]) / (2.0 * h);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    MultiscaleRk4,
    Davie,
    YoungEuler,
    Oracle1d,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub max_step: f64,
    /// Sup-norm difference between the last two refinement levels.
    pub error_estimate: Option<f64>,
    pub refinements: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPath {
    pub grid: TimeGrid,
    /// `count × dim`.
    pub states: Array2<f64>,
    pub scheme: Scheme,
    pub step_stats: StepStats,
}

impl SolutionPath {
    pub fn last(&self) -> ArrayView1<'_, f64> {
        self.states.row(self.states.nrows() - 1)
    }

    /// Columns `t, x_1, …, x_d`.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.states.ncols()).map(|k| format!("x_{k}")));
        let rows = self.states.rows().into_iter().enumerate().map(|(i, r)| {
            let mut v = vec![self.grid.time(i)];
            v.extend(r.iter().copied());
            v
        });
        write_csv(w, &header, rows)
    }

    pub fn to_container(&self) -> Result<Container, ContainerError> {
        let mut meta = Map::new();
        meta.insert("step".into(), Value::from(self.grid.step()));
        meta.insert("count".into(), Value::from(self.grid.count()));
        meta.insert("scheme".into(), serde_json::to_value(self.scheme)?);
        meta.insert("step_stats".into(), serde_json::to_value(self.step_stats)?);
        let mut c = Container::new(meta);
        let (n, d) = self.states.dim();
        c.push_block("states", vec![n, d], self.states.iter().copied().collect())?;
        Ok(c)
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_state(x: &[f64], time: f64, step: f64) -> Result<(), SolverError> {
    let n = norm(x);
    if !n.is_finite() || n > BLOWUP_NORM {
        return Err(SolverError::Blowup { time, step, norm: n, state: x.to_vec() });
    }
    Ok(())
}

/// `ẋ = Σ_k α_k(ε) f_k(x) G_k(y_{t/ε})`.
#[derive(Debug, Clone)]
pub struct MultiscaleSystem {
    pub dim: usize,
    pub fields: Vec<VectorField>,
    pub observables: Vec<HermiteProfile>,
    /// Channels `< n_split` are expected in the Wiener regime.
    pub n_split: usize,
    pub x0: Vec<f64>,
    /// Hurst parameter of the fast fOU; `None` for short-memory noise.
    pub hurst: Option<Hurst>,
}

impl MultiscaleSystem {
    pub fn new(
        fields: Vec<VectorField>,
        observables: Vec<HermiteProfile>,
        n_split: usize,
        x0: Vec<f64>,
        hurst: Option<Hurst>,
    ) -> Result<Self, SolverError> {
        let dim = x0.len();
        if fields.len() != observables.len() || fields.is_empty() {
            return Err(SolverError::DimensionMismatch { expected: fields.len(), actual: observables.len() });
        }
        if let Some(f) = fields.iter().find(|f| f.dim() != dim) {
            return Err(SolverError::DimensionMismatch { expected: dim, actual: f.dim() });
        }
        if n_split > fields.len() {
            return Err(SolverError::InvalidArgument("n_split exceeds the number of channels".into()));
        }
        Ok(Self { dim, fields, observables, n_split, x0, hurst })
    }

    /// `α_k(ε)` from each channel's critical exponent, `ε^{−½}` without long memory.
    pub fn alphas(&self, epsilon: f64) -> Vec<f64> {
        self.observables
            .iter()
            .map(|p| match (self.hurst, p.rank) {
                (Some(h), Some(m)) if m >= 1 => scaling_alpha(epsilon, crate::hermite::h_star(m, h)),
                _ => epsilon.powf(-0.5),
            })
            .collect()
    }
}

/// RK4 on the slow clock, one or more steps per fast cell with `G` linear
/// inside the cell; steps never exceed `ε/8`.
pub fn solve_multiscale(
    system: &MultiscaleSystem,
    epsilon: f64,
    fast: ArrayView1<'_, f64>,
    fast_step: f64,
    slow: &SlowGrid,
) -> Result<SolutionPath, SolverError> {
    if fast.len() < slow.fast_cells + 1 {
        return Err(SolverError::HorizonTooShort {
            required: slow.fast_cells as f64 * fast_step,
            available: (fast.len().max(1) - 1) as f64 * fast_step,
        });
    }
    let alphas = system.alphas(epsilon);
    let d = system.dim;
    let sub = (8.0 * fast_step).ceil().max(1.0) as usize;
    let h = epsilon * fast_step / sub as f64;
    let mut x = system.x0.clone();
    let mut states = Array2::zeros((slow.grid.count(), d));
    states.row_mut(0).assign(&ArrayView1::from(&x[..]));
    let nk = system.fields.len();
    let mut g0 = vec![0.0; nk];
    let mut g1 = vec![0.0; nk];
    let eval_g = |v: f64, out: &mut [f64]| {
        for ((o, p), a) in out.iter_mut().zip(&system.observables).zip(&alphas) {
            *o = a * p.synthesize(v);
        }
    };
    eval_g(fast[0], &mut g0);
    let mut buf = vec![0.0; d];
    let mut k = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    let mut tmp = vec![0.0; d];
    let mut gw = vec![0.0; nk];
    let rhs = |x: &[f64], g: &[f64], out: &mut [f64], buf: &mut [f64]| {
        out.fill(0.0);
        for (f, gk) in system.fields.iter().zip(g) {
            if *gk != 0.0 {
                f.eval(x, buf);
                for (o, b) in out.iter_mut().zip(buf.iter()) {
                    *o += gk * b;
                }
            }
        }
    };
    for n in 0..slow.fast_cells {
        eval_g(fast[n + 1], &mut g1);
        for j in 0..sub {
            let lerp = |w: f64, out: &mut [f64]| {
                for ((o, a), b) in out.iter_mut().zip(&g0).zip(&g1) {
                    *o = a + w * (b - a);
                }
            };
            let w0 = j as f64 / sub as f64;
            let wm = (j as f64 + 0.5) / sub as f64;
            let w1 = (j as f64 + 1.0) / sub as f64;
            lerp(w0, &mut gw);
            rhs(&x, &gw, &mut k[0], &mut buf);
            lerp(wm, &mut gw);
            for i in 0..d {
                tmp[i] = x[i] + 0.5 * h * k[0][i];
            }
            rhs(&tmp, &gw, &mut k[1], &mut buf);
            for i in 0..d {
                tmp[i] = x[i] + 0.5 * h * k[1][i];
            }
            rhs(&tmp, &gw, &mut k[2], &mut buf);
            lerp(w1, &mut gw);
            for i in 0..d {
                tmp[i] = x[i] + h * k[2][i];
            }
            rhs(&tmp, &gw, &mut k[3], &mut buf);
            for i in 0..d {
                x[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
            }
        }
        check_state(&x, (n + 1) as f64 * epsilon * fast_step, h)?;
        std::mem::swap(&mut g0, &mut g1);
        if (n + 1) % slow.stride == 0 {
            states.row_mut((n + 1) / slow.stride).assign(&ArrayView1::from(&x[..]));
        }
    }
    Ok(SolutionPath {
        grid: slow.grid,
        states,
        scheme: Scheme::MultiscaleRk4,
        step_stats: StepStats { max_step: h, error_estimate: None, refinements: 0 },
    })
}

fn check_fields(fields: &[VectorField], x0: &[f64], d: usize) -> Result<(), SolverError> {
    if fields.len() != d {
        return Err(SolverError::DimensionMismatch { expected: d, actual: fields.len() });
    }
    if let Some(f) = fields.iter().find(|f| f.dim() != x0.len()) {
        return Err(SolverError::DimensionMismatch { expected: x0.len(), actual: f.dim() });
    }
    Ok(())
}

fn sup_diff_on_common(coarse: &Array2<f64>, fine: &Array2<f64>) -> f64 {
    let ratio = (fine.nrows() - 1) / (coarse.nrows() - 1);
    coarse
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.iter().zip(fine.row(i * ratio)).map(|(a, b)| (a - b).abs() / b.abs().max(1.0)).fold(0.0, f64::max))
        .fold(0.0, f64::max)
}

/// Refinement levels stop once the sup difference, relative where `|x| > 1`,
/// falls below `REFINE_TOL`; past that the finest level is
/// returned unless the successive differences stopped shrinking.
fn refine(
    levels: impl Iterator<Item = usize>,
    mut solve: impl FnMut(usize) -> Result<Array2<f64>, SolverError>,
) -> Result<(Array2<f64>, StepStats, usize), SolverError> {
    let mut prev: Option<Array2<f64>> = None;
    let mut diffs: Vec<f64> = Vec::new();
    let mut last_level = 0;
    for level in levels {
        let cur = solve(level)?;
        last_level = level;
        if let Some(p) = &prev {
            let diff = sup_diff_on_common(p, &cur);
            diffs.push(diff);
            if diff < REFINE_TOL {
                prev = Some(cur);
                break;
            }
        }
        prev = Some(cur);
    }
    let states = prev.expect("at least one refinement level");
    let error_estimate = diffs.last().copied();
    if let (Some(&e), true) = (diffs.last(), diffs.len() >= 3) {
        let n = diffs.len();
        if e >= REFINE_TOL && diffs[n - 1] >= diffs[n - 2] && diffs[n - 2] >= diffs[n - 3] {
            return Err(SolverError::NoConvergence { difference: e });
        }
    }
    Ok((states, StepStats { max_step: 0.0, error_estimate, refinements: diffs.len() }, last_level))
}

/// Davie scheme `x ← x + Σ_k f_k(x) X^k_{s,t} + Σ_{i,j} (Df_j f_i)(x) 𝕏^{ij}_{s,t} + b(x)(t − s)`
/// on sub-grids of stride `2^k`, halving until successive solutions agree to 1e−6.
pub fn solve_rde(
    fields: &[VectorField],
    lift: &LiftedPath,
    x0: &[f64],
    drift: Option<&VectorField>,
) -> Result<SolutionPath, SolverError> {
    check_fields(fields, x0, lift.d)?;
    let n = lift.count() - 1;
    let max_pow = n.trailing_zeros().min(n.max(1).ilog2().saturating_sub(3));
    let levels = (0..=max_pow).rev().map(|p| 1usize << p);
    let dim = x0.len();
    let (states, mut stats, stride) = refine(levels, |stride| {
        let steps = n / stride;
        let mut out = Array2::zeros((steps + 1, dim));
        let mut x = x0.to_vec();
        out.row_mut(0).assign(&ArrayView1::from(x0));
        let mut fx: Vec<Vec<f64>> = vec![vec![0.0; dim]; fields.len()];
        let mut jac = vec![0.0; dim * dim];
        let mut bx = vec![0.0; dim];
        for i in 0..steps {
            let (s, t) = (i * stride, (i + 1) * stride);
            let dx = lift.increment(s, t);
            let dxx = lift.second_order(s, t);
            for (f, o) in fields.iter().zip(fx.iter_mut()) {
                f.eval(&x, o);
            }
            let mut next = x.clone();
            for (k, fk) in fx.iter().enumerate() {
                for a in 0..dim {
                    next[a] += fk[a] * dx[k];
                }
            }
            for (j, fj) in fields.iter().enumerate() {
                fj.jacobian(&x, &mut jac);
                for (i2, fi) in fx.iter().enumerate() {
                    let w = dxx[[i2, j]];
                    if w == 0.0 {
                        continue;
                    }
                    for a in 0..dim {
                        let dfj_fi: f64 = (0..dim).map(|b| jac[a * dim + b] * fi[b]).sum();
                        next[a] += dfj_fi * w;
                    }
                }
            }
            if let Some(b) = drift {
                b.eval(&x, &mut bx);
                let dt = lift.grid.time(t) - lift.grid.time(s);
                for a in 0..dim {
                    next[a] += bx[a] * dt;
                }
            }
            x = next;
            check_state(&x, lift.grid.time(t), lift.grid.step() * stride as f64)?;
            out.row_mut(i + 1).assign(&ArrayView1::from(&x[..]));
        }
        Ok(out)
    })?;
    stats.max_step = lift.grid.step() * stride as f64;
    let grid = TimeGrid::new(stats.max_step, states.nrows()).map_err(|e| SolverError::InvalidArgument(e.to_string()))?;
    Ok(SolutionPath { grid, states, scheme: Scheme::Davie, step_stats: stats })
}

/// Slope of `log E|X_{t+g} − X_t|` against `log g` over dyadic gaps.
pub fn holder_exponent_fit(grid: TimeGrid, driver: ArrayView2<'_, f64>) -> f64 {
    let n = driver.nrows();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut gap = 1;
    while gap * 16 <= n.max(32) && gap < n {
        let mut acc = 0.0;
        let mut cnt = 0usize;
        for i in 0..n - gap {
            for k in 0..driver.ncols() {
                acc += (driver[[i + gap, k]] - driver[[i, k]]).abs();
                cnt += 1;
            }
        }
        if acc > 0.0 {
            xs.push((gap as f64 * grid.step()).ln());
            ys.push((acc / cnt as f64).ln());
        }
        gap *= 2;
    }
    if xs.len() < 2 {
        return 1.0;
    }
    linear_fit(&xs, &ys).slope
}

/// Left-point Euler for `dx = Σ_k f_k(x) dX^k` on the piecewise-linear
/// interpolation of the driver, each cell split into `2^j` sub-steps with
/// `j` increased until successive solutions agree to 1e−6.
pub fn solve_young(fields: &[VectorField], grid: TimeGrid, driver: ArrayView2<'_, f64>, x0: &[f64]) -> Result<SolutionPath, SolverError> {
    if driver.nrows() != grid.count() {
        return Err(SolverError::DimensionMismatch { expected: grid.count(), actual: driver.nrows() });
    }
    check_fields(fields, x0, driver.ncols())?;
    let exponent = holder_exponent_fit(grid, driver);
    if exponent <= MIN_YOUNG_EXPONENT {
        return Err(SolverError::RegularityTooLow { exponent });
    }
    let n = grid.count() - 1;
    let dim = x0.len();
    let max_level = (MAX_YOUNG_STEPS / n.max(1)).max(1).ilog2() as usize;
    let (states, mut stats, level) = refine(0..=max_level, |level| {
        let sub = 1usize << level;
        let mut out = Array2::zeros((n + 1, dim));
        out.row_mut(0).assign(&ArrayView1::from(x0));
        let mut x = x0.to_vec();
        let mut fx = vec![0.0; dim];
        for i in 0..n {
            let dx: Vec<f64> = (0..driver.ncols()).map(|k| (driver[[i + 1, k]] - driver[[i, k]]) / sub as f64).collect();
            for _ in 0..sub {
                let mut next = x.clone();
                for (f, dk) in fields.iter().zip(&dx) {
                    f.eval(&x, &mut fx);
                    for a in 0..dim {
                        next[a] += fx[a] * dk;
                    }
                }
                x = next;
            }
            check_state(&x, grid.time(i + 1), grid.step() / sub as f64)?;
            out.row_mut(i + 1).assign(&ArrayView1::from(&x[..]));
        }
        Ok(out)
    })?;
    stats.max_step = grid.step() / (1usize << level) as f64;
    if stats.error_estimate.is_some_and(|e| e >= REFINE_TOL) {
        return Err(SolverError::NoConvergence { difference: stats.error_estimate.unwrap_or(f64::NAN) });
    }
    Ok(SolutionPath { grid, states, scheme: Scheme::YoungEuler, step_stats: stats })
}

/// Scalar Stratonovich solution `x_t = F^{−1}(F(x_0) + X_t − X_0)` with `F' = 1/f`.
///
/// Each step solves `∫_{x_prev}^{x} du/f(u) = δX` by safeguarded Newton on a
/// bracket found by doubling; quadrature is adaptive Gauss–Kronrod.
pub fn oracle_1d(f: impl Fn(f64) -> f64, x0: f64, grid: TimeGrid, driver: &[f64]) -> Result<SolutionPath, SolverError> {
    if driver.len() != grid.count() {
        return Err(SolverError::DimensionMismatch { expected: grid.count(), actual: driver.len() });
    }
    let tol = Tolerance { abs: 1e-15, rel: 1e-13, max_panels: 4000 };
    let mut states = Array2::zeros((grid.count(), 1));
    states[[0, 0]] = x0;
    let mut x = x0;
    for i in 1..grid.count() {
        let target = driver[i] - driver[i - 1];
        x = invert_step(&f, x, target, tol)?;
        states[[i, 0]] = x;
    }
    Ok(SolutionPath {
        grid,
        states,
        scheme: Scheme::Oracle1d,
        step_stats: StepStats { max_step: grid.step(), error_estimate: None, refinements: 0 },
    })
}

fn invert_step(f: &impl Fn(f64) -> f64, from: f64, target: f64, tol: Tolerance) -> Result<f64, SolverError> {
    let f0 = f(from);
    if !(f0.is_finite() && f0 != 0.0) {
        return Err(SolverError::FieldVanishes { at: from });
    }
    if target == 0.0 {
        return Ok(from);
    }
    let sign0 = f0.signum();
    let g = |x: f64| -> Result<f64, SolverError> {
        integrate(|u| 1.0 / f(u), from, x, tol)
            .map(|r| r.value - target)
            .map_err(|_| SolverError::FieldVanishes { at: x })
    };
    let dir = (target * f0).signum();
    let mut width = (target * f0).abs().max(1e-300);
    let mut far = from + dir * width;
    let mut doublings = 0;
    loop {
        let ff = f(far);
        if !(ff.is_finite() && ff.signum() == sign0 && ff != 0.0) {
            // Shrink towards the zero of f: the integral up to it must already exceed the target.
            let mut lo = from;
            let mut hi = far;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid);
                if fm.is_finite() && fm.signum() == sign0 && fm != 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if g(lo)? * dir * sign0 < 0.0 {
                return Err(SolverError::FieldVanishes { at: hi });
            }
            far = lo;
            break;
        }
        if g(far)? * dir * sign0 >= 0.0 {
            break;
        }
        width *= 2.0;
        far = from + dir * width;
        doublings += 1;
        if doublings > 1100 || !far.is_finite() {
            return Err(SolverError::FieldVanishes { at: far });
        }
    }
    let (mut lo, mut hi) = if from < far { (from, far) } else { (far, from) };
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gx = g(x)?;
        // g is monotone in x with slope 1/f of fixed sign.
        if (gx > 0.0) == (sign0 > 0.0) {
            hi = x;
        } else {
            lo = x;
        }
        let newton = x - gx * f(x);
        let next = if newton >= lo && newton <= hi { newton } else { 0.5 * (lo + hi) };
        if (next - x).abs() <= 1e-14 * (1.0 + x.abs()) || gx == 0.0 {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{fbm_paths, sample_fbm, sample_fou, FouMethod};
    use crate::roughpath::{add_area_drift, canonical_lift, geometric_lift, rough_distance, scaled_functional_path};
    use ndarray::array;

    fn hurst(h: f64) -> Hurst {
        Hurst::new(h).unwrap()
    }

    fn exp_field() -> VectorField {
        VectorField::scalar(|x| x, |_| 1.0)
    }

    fn fbm_driver(h: f64, count: usize, d: usize, seed: u64) -> (TimeGrid, Array2<f64>) {
        let step = 1.0 / (count - 1) as f64;
        let inc = sample_fbm(TimeGrid::new(step, count - 1).unwrap(), hurst(h), d, seed).unwrap();
        let paths = fbm_paths(&inc);
        (TimeGrid::new(step, count).unwrap(), paths.t().to_owned())
    }

    #[test]
    fn finite_difference_jacobian_matches_closed_form() {
        let m = array![[0.0, 1.0], [-2.0, 0.5]];
        let lin = VectorField::linear(m.clone());
        let fd = VectorField::new(2, move |x, out| {
            out[0] = x[1];
            out[1] = -2.0 * x[0] + 0.5 * x[1];
        });
        let (mut a, mut b) = (vec![0.0; 4], vec![0.0; 4]);
        lin.jacobian(&[0.3, -1.0], &mut a);
        fd.jacobian(&[0.3, -1.0], &mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    fn fou_row(h: f64, seed: u64) -> Array2<f64> {
        let g = TimeGrid::new(0.125, 8001).unwrap();
        sample_fou(g, hurst(h), 1, seed, FouMethod::ExactCovariance).unwrap().values
    }

    #[test]
    fn multiscale_zero_observable_stays_put() {
        let y = fou_row(0.7, 1);
        let sys = MultiscaleSystem::new(vec![exp_field()], vec![HermiteProfile::from_coeffs(vec![0.0])], 1, vec![2.0], Some(hurst(0.7))).unwrap();
        let slow = SlowGrid::new(0.125, 1e-3, 1.0, 80).unwrap();
        let sol = solve_multiscale(&sys, 1e-3, y.row(0), 0.125, &slow).unwrap();
        assert!(sol.states.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn multiscale_additive_case_is_the_scaled_functional() {
        let y = fou_row(0.7, 2);
        let p = HermiteProfile::from_coeffs(vec![0.0, 0.0, 1.0]);
        let sys = MultiscaleSystem::new(vec![VectorField::constant(vec![1.0])], vec![p.clone()], 1, vec![0.5], Some(hurst(0.7))).unwrap();
        let eps = 1e-3;
        let slow = SlowGrid::new(0.125, eps, 1.0, 80).unwrap();
        let sol = solve_multiscale(&sys, eps, y.row(0), 0.125, &slow).unwrap();
        let x = scaled_functional_path(y.row(0), 0.125, &[p], eps, &sys.alphas(eps), &slow).unwrap();
        for i in 0..slow.grid.count() {
            assert!((sol.states[[i, 0]] - 0.5 - x[[i, 0]]).abs() < 1e-10);
        }
    }

    #[test]
    fn multiscale_linear_case_is_exponential() {
        let y = fou_row(0.7, 3);
        let p = HermiteProfile::from_coeffs(vec![0.0, 0.0, 1.0]);
        let sys = MultiscaleSystem::new(vec![exp_field()], vec![p.clone()], 1, vec![1.5], Some(hurst(0.7))).unwrap();
        let eps = 1e-3;
        let slow = SlowGrid::new(0.125, eps, 1.0, 8).unwrap();
        let sol = solve_multiscale(&sys, eps, y.row(0), 0.125, &slow).unwrap();
        let x = scaled_functional_path(y.row(0), 0.125, &[p], eps, &sys.alphas(eps), &slow).unwrap();
        for i in 0..slow.grid.count() {
            assert!(((sol.states[[i, 0]] / 1.5).ln() - x[[i, 0]]).abs() < 1e-6);
        }
        assert!(matches!(
            solve_multiscale(&sys, 1e-4, y.row(0), 0.125, &SlowGrid::new(0.125, 1e-4, 1.0, 8).unwrap()),
            Err(SolverError::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn multiscale_reports_blowup() {
        let y = Array2::from_elem((1, 81), 3.0);
        let sys = MultiscaleSystem::new(
            vec![VectorField::scalar(|x| x * x, |x| 2.0 * x)],
            vec![HermiteProfile::from_coeffs(vec![0.0, 1.0])],
            1,
            vec![1.0],
            None,
        )
        .unwrap();
        let slow = SlowGrid::new(0.125, 0.1, 1.0, 1).unwrap();
        assert!(matches!(solve_multiscale(&sys, 0.1, y.row(0), 0.125, &slow), Err(SolverError::Blowup { .. })));
    }

    #[test]
    fn rde_smooth_driver_is_the_ode() {
        let n = 4097;
        let g = TimeGrid::new(1.0 / 4096.0, n).unwrap();
        let x = Array2::from_shape_fn((n, 1), |(i, _)| g.time(i));
        let sol = solve_rde(&[exp_field()], &geometric_lift(g, x.view()).unwrap(), &[1.0], None).unwrap();
        assert!((sol.last()[0] - 1f64.exp()).abs() < 1e-5);
        // Constant field: exact increment, second-order term vanishes.
        let (g2, b) = fbm_driver(0.5, 1025, 1, 4);
        let l = canonical_lift(g2, b.view()).unwrap();
        let sol = solve_rde(&[VectorField::constant(vec![2.0])], &l, &[0.25], None).unwrap();
        let ratio = (g2.count() - 1) / (sol.grid.count() - 1);
        for i in 0..sol.grid.count() {
            assert!((sol.states[[i, 0]] - 0.25 - 2.0 * l.x[[i * ratio, 0]]).abs() < 1e-12);
        }
    }

    #[test]
    fn rde_smooth_driver_converges_at_first_order() {
        // Left-point lift of X_t = t: error of the finest level ∝ Δ.
        let errs: Vec<f64> = [257usize, 513, 1025]
            .iter()
            .map(|&n| {
                let g = TimeGrid::new(1.0 / (n - 1) as f64, n).unwrap();
                let x = Array2::from_shape_fn((n, 1), |(i, _)| g.time(i));
                let l = canonical_lift(g, x.view()).unwrap();
                let mut last = f64::NAN;
                let r = solve_rde(&[exp_field()], &l, &[1.0], None);
                if let Ok(s) = r {
                    last = s.last()[0];
                }
                (last - 1f64.exp()).abs()
            })
            .collect();
        for w in errs.windows(2) {
            assert!((w[0] / w[1] - 2.0).abs() < 0.1, "{errs:?}");
        }
    }

    #[test]
    fn rde_brownian_stratonovich_is_exponential() {
        let (g, b) = fbm_driver(0.5, 4097, 1, 5);
        let l = geometric_lift(g, b.view()).unwrap();
        let sol = solve_rde(&[exp_field()], &l, &[1.0], None).unwrap();
        let ratio = (g.count() - 1) / (sol.grid.count() - 1);
        for i in 0..sol.grid.count() {
            let want = l.x[[i * ratio, 0]].exp();
            assert!((sol.states[[i, 0]] - want).abs() < 1e-3 * want);
        }
    }

    #[test]
    fn rde_response_is_proportional_to_lift_perturbation() {
        let (g, b) = fbm_driver(0.5, 2049, 2, 6);
        let l = geometric_lift(g, b.view()).unwrap();
        let fields = [VectorField::linear(array![[0.0, 1.0], [0.0, 0.0]]), VectorField::linear(array![[0.0, 0.0], [1.0, 0.0]])];
        let base = solve_rde(&fields, &l, &[1.0, 0.5], None).unwrap();
        let mut ratios = Vec::new();
        for delta in [1e-2, 1e-3, 1e-4] {
            let p = add_area_drift(&l, &array![[0.0, delta], [-delta, 0.0]]).unwrap();
            let dist = rough_distance(&l, &p, 0.4, 256, 1).unwrap();
            let sol = solve_rde(&fields, &p, &[1.0, 0.5], None).unwrap();
            let change = (&sol.states - &base.states).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            ratios.push(change / dist);
        }
        assert!(ratios.iter().all(|r| r.is_finite() && *r > 0.0));
        assert!((ratios[0] / ratios[2] - 1.0).abs() < 0.1, "{ratios:?}");
    }

    #[test]
    fn young_examples() {
        let n = 1025;
        let g = TimeGrid::new(1.0 / 1024.0, n).unwrap();
        let x = Array2::from_shape_fn((n, 1), |(i, _)| (3.0 * g.time(i)).sin());
        let sol = solve_young(&[exp_field()], g, x.view(), &[0.5]).unwrap();
        assert!((sol.last()[0] - 0.5 * (3f64).sin().exp()).abs() < 1e-5);
        let sol = solve_young(&[VectorField::constant(vec![-1.5])], g, x.view(), &[0.5]).unwrap();
        assert!((sol.last()[0] - (0.5 - 1.5 * (3f64).sin())).abs() < 1e-12);
        let (gb, b) = fbm_driver(0.5, 4097, 1, 7);
        assert!(matches!(solve_young(&[exp_field()], gb, b.view(), &[1.0]), Err(SolverError::RegularityTooLow { .. })));
    }

    #[test]
    fn young_fbm_is_exponential_and_agrees_with_rde() {
        let (g, b) = fbm_driver(0.8, 2049, 1, 8);
        let sol = solve_young(&[exp_field()], g, b.view(), &[1.0]).unwrap();
        for i in 0..g.count() {
            let want = b[[i, 0]].exp();
            assert!((sol.states[[i, 0]] - want).abs() < 1e-3 * want);
        }
        let rde = solve_rde(&[exp_field()], &geometric_lift(g, b.view()).unwrap(), &[1.0], None).unwrap();
        let ratio = (g.count() - 1) / (rde.grid.count() - 1);
        for i in 0..rde.grid.count() {
            let y = sol.states[[i * ratio, 0]];
            assert!((rde.states[[i, 0]] - y).abs() < 1e-3 * y);
        }
    }

    #[test]
    fn oracle_examples() {
        let (g, b) = fbm_driver(0.5, 257, 1, 9);
        let drv: Vec<f64> = b.column(0).to_vec();
        let sol = oracle_1d(|_| 1.0, 0.3, g, &drv).unwrap();
        for i in 0..g.count() {
            assert!((sol.states[[i, 0]] - 0.3 - drv[i]).abs() < 1e-11);
        }
        let sol = oracle_1d(|x| x, 2.0, g, &drv).unwrap();
        for i in 0..g.count() {
            assert!((sol.states[[i, 0]] - 2.0 * drv[i].exp()).abs() < 1e-10 * sol.states[[i, 0]]);
        }
        let small: Vec<f64> = drv.iter().map(|v| 0.2 * v).collect();
        let sol = oracle_1d(|x| 1.0 + x * x, 0.1, g, &small).unwrap();
        for i in 0..g.count() {
            let want = (0.1f64.atan() + small[i]).tan();
            assert!((sol.states[[i, 0]] - want).abs() < 1e-10 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn oracle_detects_vanishing_field() {
        let g = TimeGrid::new(0.5, 3).unwrap();
        assert!(matches!(oracle_1d(|_| 0.0, 1.0, g, &[0.0, 0.1, 0.2]), Err(SolverError::FieldVanishes { .. })));
        // ∫₀^1 (1 − u)^{−½} du = 2: targets beyond 2 are unreachable.
        let f = |x: f64| if x < 1.0 { (1.0 - x).sqrt() } else { 0.0 };
        assert!(oracle_1d(f, 0.0, g, &[0.0, 1.0, 1.9]).is_ok());
        assert!(matches!(oracle_1d(f, 0.0, g, &[0.0, 1.0, 2.5]), Err(SolverError::FieldVanishes { .. })));
    }

    #[test]
    fn rde_agrees_with_oracle_for_nonlinear_field() {
        let (g, b) = fbm_driver(0.5, 4097, 1, 10);
        let drv: Vec<f64> = b.column(0).to_vec();
        let field = VectorField::scalar(|x| 2.0 + x.sin(), |x| x.cos());
        let sol = solve_rde(&[field], &geometric_lift(g, b.view()).unwrap(), &[0.0], None).unwrap();
        let oracle = oracle_1d(|x| 2.0 + x.sin(), 0.0, g, &drv).unwrap();
        let ratio = (g.count() - 1) / (sol.grid.count() - 1);
        let scale = oracle.states.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..sol.grid.count() {
            assert!((sol.states[[i, 0]] - oracle.states[[i * ratio, 0]]).abs() < 1e-3 * scale);
        }
    }

    #[test]
    fn solutions_are_deterministic_and_export_csv() {
        let (g, b) = fbm_driver(0.5, 513, 1, 11);
        let l = geometric_lift(g, b.view()).unwrap();
        let a = solve_rde(&[exp_field()], &l, &[1.0], None).unwrap();
        let c = solve_rde(&[exp_field()], &l, &[1.0], None).unwrap();
        assert_eq!(a, c);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x_1\n"));
        assert_eq!(text.lines().count(), a.grid.count() + 1);
    }
}
