//! Log-log regression of the first- and second-order moments of the
//! canonical lift against the gap.

use rayon::prelude::*;
use serde_json::json;

use super::common::{bootstrap_ci, epsilon_seed, invalid, slope, slow_path, wiener_gate, Plan, Setup};
use super::config::ExperimentConfig;
use super::report::{ConvergenceReport, ExperimentOutput, Table, Verdict};
use super::LabError;
use crate::roughpath::canonical_lift;

/// Per-path window averages `(|X_{s,s+g}|^p, ‖𝕏_{s,s+g}‖_F^{p/2})` for each gap.
fn window_moments(setup: &Setup, plan: &Plan, gaps: &[usize], p: f64, seed: u64, n_paths: usize) -> Result<Vec<Vec<(f64, f64)>>, LabError> {
    let src = setup.noise.source(plan.fast)?;
    let weights: Vec<f64> = setup.alphas(plan.epsilon).iter().map(|a| a * plan.epsilon * plan.step).collect();
    let n = plan.slow.grid.count() - 1;
    (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let x = slow_path(&src.path(seed, i as u64), &setup.channels, &weights, &plan.slow);
            let lift = canonical_lift(plan.slow.grid, x.view())?;
            Ok(gaps
                .iter()
                .map(|&g| {
                    let (mut first, mut second, mut count) = (0.0, 0.0, 0.0);
                    for s in (0..=n - g).step_by(g) {
                        let inc = lift.increment(s, s + g);
                        first += inc.iter().map(|v| v * v).sum::<f64>().powf(0.5 * p);
                        second += lift.second_order(s, s + g).iter().map(|v| v * v).sum::<f64>().powf(0.25 * p);
                        count += 1.0;
                    }
                    (first / count, second / count)
                })
                .collect())
        })
        .collect()
}

/// Fits `log ‖X_{s,t}‖_{L^p}` and `log ‖𝕏_{s,t}‖_{L^{p/2}}` against `log |t − s|`
/// over dyadic gaps of at least `min_gap_over_eps·ε`, at the smallest `ε`.
pub fn verify_moments(cfg: &ExperimentConfig) -> Result<ExperimentOutput, LabError> {
    let setup = Setup::new(cfg)?;
    let mut notices = Vec::new();
    wiener_gate(&setup, &mut notices)?;
    let p = cfg.tolerances.moment_p;
    let e = cfg.epsilons.len() - 1;
    let eps = cfg.epsilons[e];
    let plan = Plan::new(cfg, eps, cfg.grid.max_slow_cells)?;
    let n = plan.slow.grid.count() - 1;
    let dt = plan.slow.grid.step();
    let mut g = 1usize;
    while (g as f64) * dt < cfg.grid.min_gap_over_eps * eps * (1.0 - 1e-9) {
        g *= 2;
    }
    let mut gaps = Vec::new();
    while 2 * g <= n {
        gaps.push(g);
        g *= 2;
    }
    if gaps.len() < 3 {
        return Err(invalid("grid.max_slow_cells", format!("only {} dyadic gaps fit between the minimum gap and t_max/2", gaps.len())));
    }
    let rows = window_moments(&setup, &plan, &gaps, p, epsilon_seed(cfg.seed, e), cfg.n_paths)?;
    let xs: Vec<f64> = gaps.iter().map(|&g| (g as f64 * dt).ln()).collect();
    let fit = |idx: &[usize]| -> (f64, f64) {
        let m = idx.len() as f64;
        let (mut y1, mut y2) = (Vec::new(), Vec::new());
        for k in 0..gaps.len() {
            let a: f64 = idx.iter().map(|&i| rows[i][k].0).sum::<f64>() / m;
            let b: f64 = idx.iter().map(|&i| rows[i][k].1).sum::<f64>() / m;
            y1.push(a.ln() / p);
            y2.push(2.0 * b.ln() / p);
        }
        (slope(&xs, &y1), slope(&xs, &y2))
    };
    let all: Vec<usize> = (0..rows.len()).collect();
    let mut table = Table::new("moments", &["gap", "first_order_lp", "second_order_lp2"]);
    for (k, &g) in gaps.iter().enumerate() {
        let a = all.iter().map(|&i| rows[i][k].0).sum::<f64>() / rows.len() as f64;
        let b = all.iter().map(|&i| rows[i][k].1).sum::<f64>() / rows.len() as f64;
        table.push(vec![g as f64 * dt, a.powf(1.0 / p), b.powf(2.0 / p)]);
    }
    if rows.iter().all(|r| r.iter().all(|&(a, b)| a == 0.0 && b == 0.0)) {
        notices.push("all paths vanish identically; slopes are undefined and no verdict is issued".into());
        let metrics = json!({ "epsilon": eps, "p": p, "gaps": gaps, "degenerate": true });
        return Ok(ExperimentOutput { report: ConvergenceReport::new(cfg, metrics, Vec::new(), notices), tables: vec![table] });
    }
    let (s1, s2) = fit(&all);
    let seed = epsilon_seed(cfg.seed, 0x8000);
    let ci1 = bootstrap_ci(rows.len(), cfg.grid.bootstrap, seed, |idx| fit(idx).0);
    let ci2 = bootstrap_ci(rows.len(), cfg.grid.bootstrap, seed, |idx| fit(idx).1);
    let verdicts = vec![
        Verdict::within("first_order_slope", s1, 0.5, cfg.tolerances.first_order_slope),
        Verdict::within("second_order_slope", s2, 1.0, cfg.tolerances.second_order_slope),
    ];
    let metrics = json!({
        "epsilon": eps,
        "p": p,
        "gaps": gaps.iter().map(|&g| g as f64 * dt).collect::<Vec<_>>(),
        "first_order_slope": s1,
        "first_order_ci": [ci1.0, ci1.1],
        "second_order_slope": s2,
        "second_order_ci": [ci2.0, ci2.1],
        "degenerate": false,
    });
    Ok(ExperimentOutput { report: ConvergenceReport::new(cfg, metrics, verdicts, notices), tables: vec![table] })
}
