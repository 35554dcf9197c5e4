//! Long-memory channels: self-similarity exponent, path regularity and the
//! Young limit equation.

use rayon::prelude::*;
use serde_json::json;

use super::common::{bootstrap_ci, epsilon_seed, slope, slow_path, Plan, Setup};
use super::config::ExperimentConfig;
use super::report::{ConvergenceReport, ExperimentOutput, Table, Verdict};
use super::LabError;
use crate::solver::{holder_exponent_fit, solve_young, VectorField};

/// Number of dyadic times `t_max·2^{−k}` in the variance regression.
const LEVELS: usize = 6;

/// Regresses `½ log Var(X^ε_t)` on `log t` at `t = t_max·2^{−k}`, fits the
/// Hölder exponent of a few slow paths and checks the Young solve of
/// `dx = x dX` against `x0·exp(X)`.
pub fn verify_hermite_regime(cfg: &ExperimentConfig) -> Result<ExperimentOutput, LabError> {
    let setup = Setup::new(cfg)?;
    let ch = &setup.channels[0];
    let hs = match setup.noise.h_star(ch) {
        Some(hs) if hs > 0.5 => hs,
        other => {
            return Err(LabError::RegimeMismatch {
                channel: 0,
                h_star: other.unwrap_or(f64::NAN),
                required: "long-memory Gaussian noise with H*(m) > 1/2".into(),
            })
        }
    };
    let e = cfg.epsilons.len() - 1;
    let eps = cfg.epsilons[e];
    let plan = Plan::new(cfg, eps, cfg.grid.max_slow_cells)?;
    let times: Vec<f64> = (0..LEVELS).rev().map(|k| cfg.t_max / 2f64.powi(k as i32)).collect();
    let nodes: Vec<usize> = times.iter().map(|&t| plan.node(t, cfg.t_max)).collect::<Result<_, _>>()?;
    let src = setup.noise.source(plan.fast)?;
    let weights: Vec<f64> = setup.alphas(eps).iter().map(|a| a * eps * plan.step).collect();
    let seed = epsilon_seed(cfg.seed, e);
    let slow_nodes: Vec<usize> = (0..plan.slow.grid.count()).map(|i| i * plan.slow.stride).collect();
    let n_solve = cfg.grid.solver_paths.min(cfg.n_paths);

    let values: Vec<Vec<f64>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let fast = src.path(seed, i as u64);
            super::common::functional_at_nodes(&fast, &setup.channels, &weights, &nodes).swap_remove(0)
        })
        .collect();
    let logt: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let fit = |idx: &[usize]| -> f64 {
        let ys: Vec<f64> = (0..LEVELS)
            .map(|j| {
                let m = idx.len() as f64;
                let mean = idx.iter().map(|&i| values[i][j]).sum::<f64>() / m;
                let var = idx.iter().map(|&i| (values[i][j] - mean).powi(2)).sum::<f64>() / (m - 1.0);
                0.5 * var.ln()
            })
            .collect();
        slope(&logt, &ys)
    };
    let all: Vec<usize> = (0..values.len()).collect();
    let exponent = fit(&all);
    let ci = bootstrap_ci(values.len(), cfg.grid.bootstrap, epsilon_seed(cfg.seed, 0x8000), fit);

    let x0 = cfg.system.as_ref().and_then(|s| s.x0.first().copied()).unwrap_or(1.0);
    let identity = [VectorField::scalar(|x| x, |_| 1.0)];
    let solves: Vec<(f64, f64)> = (0..n_solve)
        .into_par_iter()
        .map(|i| {
            let fast = src.path(seed, i as u64);
            let x = slow_path(&fast, &setup.channels, &weights, &plan.slow);
            debug_assert_eq!(x.nrows(), slow_nodes.len());
            let holder = holder_exponent_fit(plan.slow.grid, x.view());
            let sol = solve_young(&identity, plan.slow.grid, x.view(), &[x0]).map_err(|source| LabError::Solver { path: i, epsilon: eps, source })?;
            let err = (0..x.nrows())
                .map(|r| {
                    let exact = x0 * x[[r, 0]].exp();
                    ((sol.states[[r, 0]] - exact) / exact).abs()
                })
                .fold(0.0, f64::max);
            Ok((holder, err))
        })
        .collect::<Result<_, LabError>>()?;
    let holder = solves.iter().map(|s| s.0).sum::<f64>() / solves.len().max(1) as f64;
    let young_err = solves.iter().map(|s| s.1).fold(0.0, f64::max);

    let mut table = Table::new("hermite_variance", &["t", "variance"]);
    for (j, &t) in times.iter().enumerate() {
        let col: Vec<f64> = values.iter().map(|v| v[j]).collect();
        table.push(vec![t, crate::stats::variance(&col)]);
    }
    let verdicts = vec![
        Verdict::within("self_similarity_exponent", exponent, hs, cfg.tolerances.exponent),
        Verdict::above("holder_exponent", holder, cfg.tolerances.holder_floor),
        Verdict::at_most("young_relative_error", young_err, cfg.tolerances.oracle_relative),
    ];
    let metrics = json!({
        "epsilon": eps,
        "h_star": hs,
        "times": times,
        "exponent": exponent,
        "exponent_ci": [ci.0, ci.1],
        "holder_exponent": holder,
        "young_paths": n_solve,
        "young_relative_error": young_err,
    });
    Ok(ExperimentOutput { report: ConvergenceReport::new(cfg, metrics, verdicts, Vec::new()), tables: vec![table] })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(obs: &str, h: f64) -> ExperimentConfig {
        ExperimentConfig::from_toml(&format!(
            "kind = \"hermite_regime\"\nseed = 2\nn_paths = 300\nepsilons = [0.01]\nobservables = [\"{obs}\"]\n\
             [noise]\nkind = \"fou\"\nhurst = {h}\n[grid]\nsolver_paths = 2\nbootstrap = 20\nmax_slow_cells = 256\n"
        ))
        .unwrap()
    }

    #[test]
    fn wiener_channel_is_rejected() {
        assert!(matches!(verify_hermite_regime(&config("H2", 0.7)), Err(LabError::RegimeMismatch { .. })));
        assert!(matches!(verify_hermite_regime(&config("H1", 0.5)), Err(LabError::RegimeMismatch { .. })));
    }

    #[test]
    fn rank_one_young_solve_matches_exponential() {
        let out = verify_hermite_regime(&config("H1", 0.8)).unwrap();
        let v = out.report.verdict("young_relative_error").unwrap();
        assert!(v.passed, "{}", out.report.to_json());
        assert!(out.report.verdict("holder_exponent").unwrap().passed);
    }
}
