//! End-to-end homogenisation: the multiscale ODE across the `ε` schedule
//! against an ensemble of the limit equation.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde_json::json;

use super::common::{epsilon_seed, invalid, psd_sqrt, slow_path, wiener_gate, Plan, Setup};
use super::config::{Channel, ExperimentConfig, FieldSpec};
use super::distance::{coordinate_w1, lognormal_w1, sliced_w1, wasserstein1};
use super::report::{ConvergenceReport, ExperimentOutput, Table, Verdict};
use super::LabError;
use crate::hermite::assumption_gate;
use crate::noise::TimeGrid;
use crate::rng::{derive_seed, stream, tag};
use crate::roughpath::{add_area_drift, geometric_lift};
use crate::solver::{oracle_1d, solve_multiscale, solve_rde, MultiscaleSystem, VectorField};

const PROJECTIONS: usize = 64;

fn build_field(spec: &FieldSpec, d: usize, k: usize) -> Result<VectorField, LabError> {
    Ok(match spec {
        FieldSpec::Identity => VectorField::linear(Array2::eye(d)),
        FieldSpec::Zero => VectorField::zero(d),
        FieldSpec::Constant { value } => {
            if value.len() != d {
                return Err(invalid(&format!("system.fields[{k}].value"), format!("expected {d} entries")));
            }
            VectorField::constant(value.clone())
        }
        FieldSpec::Linear { matrix } => {
            if matrix.len() != d || matrix.iter().any(|r| r.len() != d) {
                return Err(invalid(&format!("system.fields[{k}].matrix"), format!("expected a {d}×{d} matrix")));
            }
            VectorField::linear(Array2::from_shape_fn((d, d), |(a, b)| matrix[a][b]))
        }
    })
}

/// Closed-form scalar limit: `f(x) = c·x` or `f(x) = c`.
#[derive(Debug, Clone, Copy)]
enum ScalarField {
    Linear(f64),
    Constant(f64),
    Zero,
}

fn scalar_field(spec: &FieldSpec) -> ScalarField {
    let c = match spec {
        FieldSpec::Identity => return ScalarField::Linear(1.0),
        FieldSpec::Zero => return ScalarField::Zero,
        FieldSpec::Constant { value } => return if value[0] == 0.0 { ScalarField::Zero } else { ScalarField::Constant(value[0]) },
        FieldSpec::Linear { matrix } => matrix[0][0],
    };
    if c == 0.0 {
        ScalarField::Zero
    } else {
        ScalarField::Linear(c)
    }
}

/// Leading channels in the Wiener regime.
fn inferred_split(setup: &Setup) -> usize {
    setup.channels.iter().take_while(|c| setup.noise.h_star(c).is_none_or(|hs| hs < 0.5)).count()
}

fn area_block(setup: &Setup, chans: &[Channel]) -> Result<DMatrix<f64>, LabError> {
    let n = chans.len();
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        for l in 0..n {
            a[(j, l)] = setup.noise.area(&chans[j], &chans[l])?;
        }
    }
    Ok(a)
}

/// Solves the multiscale system along the schedule and compares the law of
/// `x^ε_{t_max}` with the law of the limit equation in Wasserstein-1.
///
/// Limit drivers are sampled afresh: the Wiener block has covariance
/// `2·sym(A)` and second-order process `½ W ⊗ W` plus `(t − s)·(Aᵀ − A)/2`;
/// Hermite channels are scaled functionals of independent fast paths at the
/// smallest `ε`. A single scalar Wiener channel with `f(x) = c·x` or `f = c`
/// is integrated in closed form, and `f(x) = c·x` additionally gets the exact
/// lognormal distance.
pub fn homogenize(cfg: &ExperimentConfig) -> Result<ExperimentOutput, LabError> {
    let setup = Setup::new(cfg)?;
    let sys = cfg.system.as_ref().ok_or_else(|| invalid("system", "homogenize needs a [system] table"))?;
    let d = sys.x0.len();
    let nch = setup.channels.len();
    let fields: Vec<VectorField> =
        sys.fields.iter().enumerate().map(|(k, f)| build_field(f, d, k)).collect::<Result<_, _>>()?;
    let n_split = sys.n_split.unwrap_or_else(|| inferred_split(&setup));
    let p = sys.p.clone().unwrap_or_else(|| vec![cfg.tolerances.moment_p; nch]);
    let profiles: Vec<_> = setup.channels.iter().map(|c| c.profile.clone()).collect();
    let mut notices = Vec::new();

    let gate = match setup.noise.long_memory() {
        Some(h) => {
            let gate = assumption_gate(&profiles, &p, h, n_split)?;
            if let Some(v) = &gate.violated {
                return Err(LabError::GateFailed { violated: v.clone() });
            }
            serde_json::to_value(&gate)?
        }
        None => {
            if n_split != nch {
                return Err(LabError::GateFailed { violated: "short-memory noise has no Hermite block".into() });
            }
            if let Some(k) = p.iter().position(|&pk| 0.5 - 1.0 / pk <= 1.0 / 3.0) {
                return Err(LabError::GateFailed { violated: format!("channel {k}: 1/2 - 1/p > 1/3") });
            }
            wiener_gate(&setup, &mut notices)?;
            json!({ "passed": true })
        }
    };
    let system = MultiscaleSystem::new(fields.clone(), profiles, n_split, sys.x0.clone(), setup.noise.hurst())?;

    let mut finals = Vec::new();
    let mut last_plan = None;
    for (e, &eps) in cfg.epsilons.iter().enumerate() {
        let plan = Plan::new(cfg, eps, cfg.grid.max_slow_cells)?;
        let src = setup.noise.source(plan.fast)?;
        let seed = epsilon_seed(cfg.seed, e);
        let xs: Vec<Vec<f64>> = (0..cfg.n_paths)
            .into_par_iter()
            .map(|i| {
                let fast = src.path(seed, i as u64);
                solve_multiscale(&system, eps, ArrayView1::from(&fast), plan.step, &plan.slow)
                    .map(|s| s.last().to_vec())
                    .map_err(|source| LabError::Solver { path: i, epsilon: eps, source })
            })
            .collect::<Result<_, _>>()?;
        finals.push(xs);
        last_plan = Some(plan);
    }
    let plan = last_plan.ok_or_else(|| invalid("epsilons", "empty schedule"))?;

    let wiener = &setup.channels[..n_split];
    let a = area_block(&setup, wiener)?;
    let root = psd_sqrt(&(&a + a.transpose()));
    let mut drift = Array2::zeros((nch, nch));
    for j in 0..n_split {
        for l in 0..n_split {
            drift[[j, l]] = 0.5 * (a[(l, j)] - a[(j, l)]);
        }
    }
    let grid = if n_split == nch {
        TimeGrid::new(cfg.t_max / cfg.grid.limit_cells as f64, cfg.grid.limit_cells + 1)?
    } else {
        plan.slow.grid
    };
    let hermite = &setup.channels[n_split..];
    let hermite_src = if hermite.is_empty() { None } else { Some(setup.noise.source(plan.fast)?) };
    let alphas = setup.alphas(plan.epsilon);
    let hermite_weights: Vec<f64> = alphas[n_split..].iter().map(|a| a * plan.epsilon * plan.step).collect();
    let limit_seed = derive_seed(cfg.seed, 0x200);
    let scalar = (d == 1 && nch == 1 && n_split == 1).then(|| scalar_field(&sys.fields[0]));
    let all_zero = sys.fields.iter().all(|f| matches!(f, FieldSpec::Zero));
    let sqrt_dt = grid.step().sqrt();

    let limit: Vec<Vec<f64>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>, LabError> {
            if all_zero {
                return Ok(sys.x0.clone());
            }
            let mut rng = stream(limit_seed, tag::LIMIT_DRIVER, i as u64);
            let mut driver = Array2::zeros((grid.count(), nch));
            let mut z = vec![0.0; n_split];
            for r in 1..grid.count() {
                z.iter_mut().for_each(|v| *v = rng.sample::<f64, _>(StandardNormal) * sqrt_dt);
                for j in 0..n_split {
                    let inc: f64 = (0..n_split).map(|l| root[(j, l)] * z[l]).sum();
                    driver[[r, j]] = driver[[r - 1, j]] + inc;
                }
            }
            if let Some(src) = &hermite_src {
                let fast = src.path(limit_seed, i as u64);
                let h = slow_path(&fast, hermite, &hermite_weights, &plan.slow);
                driver.slice_mut(ndarray::s![.., n_split..]).assign(&h);
            }
            match scalar {
                Some(ScalarField::Zero) => return Ok(sys.x0.clone()),
                Some(ScalarField::Linear(c)) if sys.x0[0] != 0.0 => {
                    let w: Vec<f64> = driver.column(0).to_vec();
                    return Ok(vec![oracle_1d(move |x| c * x, sys.x0[0], grid, &w)?.last()[0]]);
                }
                Some(ScalarField::Linear(_)) => return Ok(sys.x0.clone()),
                Some(ScalarField::Constant(c)) => {
                    let w: Vec<f64> = driver.column(0).to_vec();
                    return Ok(vec![oracle_1d(move |_| c, sys.x0[0], grid, &w)?.last()[0]]);
                }
                None => {}
            }
            let lift = add_area_drift(&geometric_lift(grid, driver.view())?, &drift)?;
            Ok(solve_rde(&fields, &lift, &sys.x0, None)?.last().to_vec())
        })
        .collect::<Result<_, _>>()?;

    let sigma = a.get((0, 0)).map(|v| (2.0 * v * cfg.t_max).sqrt());
    let exact_lognormal = match (scalar, sigma) {
        (Some(ScalarField::Linear(c)), Some(s)) if sys.x0[0] != 0.0 => Some(c.abs() * s),
        _ => None,
    };
    let mut header = vec!["epsilon", "distance", "ensemble_distance"];
    let coord_names: Vec<String> = (0..d).map(|k| format!("w1_x{k}")).collect();
    header.extend(coord_names.iter().map(String::as_str));
    let mut table = Table::new("homogenize", &header);
    let mut distances = Vec::new();
    let mut rows = Vec::new();
    for (e, xs) in finals.iter().enumerate() {
        let ensemble = if d == 1 {
            wasserstein1(&xs.iter().map(|x| x[0]).collect::<Vec<_>>(), &limit.iter().map(|x| x[0]).collect::<Vec<_>>())
        } else {
            sliced_w1(xs, &limit, PROJECTIONS, cfg.seed)
        };
        let exact = exact_lognormal.map(|s| lognormal_w1(&xs.iter().map(|x| x[0]).collect::<Vec<_>>(), sys.x0[0], s));
        let distance = exact.unwrap_or(ensemble);
        let coords = coordinate_w1(xs, &limit);
        let mut row = vec![cfg.epsilons[e], distance, ensemble];
        row.extend(&coords);
        table.push(row);
        rows.push(json!({
            "epsilon": cfg.epsilons[e], "distance": distance, "ensemble_distance": ensemble,
            "lognormal_distance": exact, "coordinate_distances": coords,
        }));
        distances.push(distance);
    }
    let mut verdicts = vec![Verdict::below("wasserstein_final", *distances.last().unwrap_or(&f64::NAN), cfg.tolerances.wasserstein)];
    for (k, w) in distances.windows(2).enumerate() {
        verdicts.push(Verdict::at_most(format!("wasserstein_decrease[{k}]"), w[1] - w[0], 0.0));
    }
    let metrics = json!({
        "n_split": n_split,
        "gate": gate,
        "area_matrix": (0..n_split).map(|j| (0..n_split).map(|l| a[(j, l)]).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "limit_sigma": sigma,
        "limit_grid_cells": grid.count() - 1,
        "epsilons": rows,
    });
    Ok(ExperimentOutput { report: ConvergenceReport::new(cfg, metrics, verdicts, notices), tables: vec![table] })
}
