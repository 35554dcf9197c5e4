//! Gaussian limits of the scaled functionals: marginal normality and the
//! limiting covariance.

use serde_json::json;

use super::common::{epsilon_seed, fisher_z, invalid, sample_nodes, trapezoid_variance, wiener_gate, Plan, Setup};
use super::config::ExperimentConfig;
use super::report::{ConvergenceReport, ExperimentOutput, Table, Verdict};
use super::LabError;
use crate::stats::{cross_moment_with_se, ks_one_sample, median, pearson, standard_normal_cdf, standard_normal_quantile, variance_with_se};

const FRACTIONS: [f64; 3] = [0.25, 0.5, 1.0];

fn column(samples: &[Vec<Vec<f64>>], k: usize, j: usize) -> Vec<f64> {
    samples.iter().map(|p| p[k][j]).collect()
}

/// Symmetrised area matrix of the channels.
fn area_matrix(setup: &Setup) -> Result<Vec<Vec<f64>>, LabError> {
    let chans = &setup.channels;
    let mut a = vec![vec![0.0; chans.len()]; chans.len()];
    for j in 0..chans.len() {
        for l in j..chans.len() {
            let v = if j == l {
                setup.noise.area(&chans[j], &chans[l])?
            } else {
                0.5 * (setup.noise.area(&chans[j], &chans[l])? + setup.noise.area(&chans[l], &chans[j])?)
            };
            a[j][l] = v;
            a[l][j] = v;
        }
    }
    Ok(a)
}

/// KS normality of `X^ε_t / sd` at `t ∈ {¼, ½, 1}·t_max`, where `sd²` is the
/// exact finite-ε variance, plus variance and increment-independence checks.
///
/// Verdicts are taken at the smallest `ε`; the KS level is Bonferroni-corrected
/// over channels and times.
pub fn verify_clt(cfg: &ExperimentConfig) -> Result<ExperimentOutput, LabError> {
    let setup = Setup::new(cfg)?;
    let mut notices = Vec::new();
    wiener_gate(&setup, &mut notices)?;
    let area = area_matrix(&setup)?;
    let times = FRACTIONS.map(|f| f * cfg.t_max);
    let live: Vec<usize> = (0..setup.channels.len()).filter(|&k| !setup.is_degenerate(k)).collect();
    let level = cfg.tolerances.significance / (live.len() * times.len()).max(1) as f64;
    let z_crit = standard_normal_quantile(1.0 - 0.5 * cfg.tolerances.significance / live.len().max(1) as f64);

    let mut table = Table::new(
        "clt",
        &["epsilon", "channel", "t", "ks_statistic", "ks_p_value", "variance", "variance_se", "variance_exact", "variance_limit"],
    );
    let mut per_eps = Vec::new();
    let mut verdicts = Vec::new();
    let mut ks_medians = Vec::new();
    let last = cfg.epsilons.len() - 1;
    for (e, &eps) in cfg.epsilons.iter().enumerate() {
        let plan = Plan::new(cfg, eps, cfg.grid.max_slow_cells)?;
        let nodes: Vec<usize> = times.iter().map(|&t| plan.node(t, cfg.t_max)).collect::<Result<_, _>>()?;
        let samples = sample_nodes(&setup, &plan, &nodes, cfg.n_paths, epsilon_seed(cfg.seed, e))?;
        let alphas = setup.alphas(eps);
        let mut ks_stats = Vec::new();
        let mut rows = Vec::new();
        for &k in &live {
            let ch = &setup.channels[k];
            let cov = setup.noise.lag_covariance(ch, ch, plan.step, nodes[2] + 1)?;
            for (j, &t) in times.iter().enumerate() {
                let xs = column(&samples, k, j);
                let exact = trapezoid_variance(&cov, nodes[j], alphas[k] * eps * plan.step);
                let sd = exact.sqrt();
                let scaled: Vec<f64> = xs.iter().map(|x| x / sd).collect();
                let ks = ks_one_sample(&scaled, standard_normal_cdf);
                let (var, se) = variance_with_se(&xs);
                let limit = 2.0 * t * area[k][k];
                table.push(vec![eps, k as f64, t, ks.statistic, ks.p_value, var, se, exact, limit]);
                ks_stats.push(ks.statistic);
                rows.push(json!({
                    "channel": k, "t": t, "ks_statistic": ks.statistic, "ks_p_value": ks.p_value,
                    "variance": var, "variance_se": se, "variance_exact": exact, "variance_limit": limit,
                }));
                if e == last {
                    verdicts.push(Verdict::above(format!("ks_p[{k}][t={t}]"), ks.p_value, level));
                    let dev = (var - limit).abs() / se;
                    verdicts.push(Verdict::at_most(format!("variance_limit[{k}][t={t}]"), dev, cfg.tolerances.se_multiplier));
                }
            }
            if e == last {
                let first = column(&samples, k, 0);
                let incr: Vec<f64> = samples.iter().map(|p| p[k][2] - p[k][1]).collect();
                let z = fisher_z(pearson(&first, &incr), first.len()).abs();
                verdicts.push(Verdict::at_most(format!("increment_independence[{k}]"), z, z_crit));
            }
        }
        ks_medians.push(median(&ks_stats));
        per_eps.push(json!({ "epsilon": eps, "rows": rows }));
    }
    if ks_medians.windows(2).any(|w| w[1] > w[0]) {
        notices.push(format!("median KS statistic is not monotone along the schedule: {ks_medians:?}"));
    }
    let metrics = json!({
        "times": times,
        "area_matrix": area,
        "ks_level": level,
        "ks_median_by_epsilon": ks_medians,
        "epsilons": per_eps,
    });
    Ok(ExperimentOutput { report: ConvergenceReport::new(cfg, metrics, verdicts, notices), tables: vec![table] })
}

/// `E[X^j_t X^l_s]` against `2(t ∧ s)·A^{jl}` on a 3×3 time grid at the smallest `ε`.
pub fn verify_covariance(cfg: &ExperimentConfig) -> Result<ExperimentOutput, LabError> {
    let setup = Setup::new(cfg)?;
    let mut notices = Vec::new();
    wiener_gate(&setup, &mut notices)?;
    let area = area_matrix(&setup)?;
    let eps = *cfg.epsilons.last().ok_or_else(|| invalid("epsilons", "empty schedule"))?;
    let plan = Plan::new(cfg, eps, cfg.grid.max_slow_cells)?;
    let times = FRACTIONS.map(|f| f * cfg.t_max);
    let mut nodes = vec![0];
    for &t in &times {
        nodes.push(plan.node(t, cfg.t_max)?);
    }
    let samples = sample_nodes(&setup, &plan, &nodes, cfg.n_paths, epsilon_seed(cfg.seed, cfg.epsilons.len() - 1))?;
    let d = setup.channels.len();

    let origin = samples.iter().flat_map(|p| p.iter().map(|c| c[0].abs())).fold(0.0, f64::max);
    let mut verdicts = vec![Verdict::at_most("x_at_origin", origin, 0.0)];
    let mut table = Table::new("covariance", &["j", "l", "t", "s", "moment", "moment_se", "limit"]);
    let mut rows = Vec::new();
    for j in 0..d {
        for l in j..d {
            for (a, &t) in times.iter().enumerate() {
                for (b, &s) in times.iter().enumerate() {
                    let (m, se) = cross_moment_with_se(&column(&samples, j, a + 1), &column(&samples, l, b + 1));
                    let limit = 2.0 * t.min(s) * area[j][l];
                    table.push(vec![j as f64, l as f64, t, s, m, se, limit]);
                    rows.push(json!({ "j": j, "l": l, "t": t, "s": s, "moment": m, "moment_se": se, "limit": limit }));
                    let dev = if se > 0.0 { (m - limit).abs() / se } else { (m - limit).abs() };
                    verdicts.push(Verdict::at_most(format!("covariance[{j},{l}][t={t},s={s}]"), dev, cfg.tolerances.se_multiplier));
                }
            }
        }
    }
    let metrics = json!({ "epsilon": eps, "area_matrix": area, "rows": rows });
    Ok(ExperimentOutput { report: ConvergenceReport::new(cfg, metrics, verdicts, notices), tables: vec![table] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lab::LabError;

    fn config(extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(&format!(
            "kind = \"clt\"\nseed = 3\nn_paths = 400\nepsilons = [0.1, 0.02]\nobservables = [\"H1\"]\n{extra}\n[noise]\nkind = \"fou\"\nhurst = 0.5\n"
        ))
        .unwrap()
    }

    #[test]
    fn ou_clt_passes_and_is_deterministic() {
        let cfg = config("");
        let a = verify_clt(&cfg).unwrap();
        assert!(a.report.passed, "{}", a.report.to_json());
        let b = verify_clt(&cfg).unwrap();
        assert_eq!(serde_json::to_string(&a.report.metrics).unwrap(), serde_json::to_string(&b.report.metrics).unwrap());
        assert!((a.report.metrics["area_matrix"][0][0].as_f64().unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn long_memory_channel_is_rejected() {
        let cfg = ExperimentConfig::from_toml(
            "kind = \"clt\"\nseed = 1\nn_paths = 10\nepsilons = [0.5]\nobservables = [\"H1\"]\n[noise]\nkind = \"fou\"\nhurst = 0.7\n",
        )
        .unwrap();
        assert!(matches!(verify_clt(&cfg), Err(LabError::RegimeMismatch { channel: 0, .. })));
    }

    #[test]
    fn covariance_origin_is_exactly_zero() {
        let mut cfg = config("");
        cfg.observables = vec!["H1".into(), "H2".into()];
        let out = verify_covariance(&cfg).unwrap();
        let v = out.report.verdict("x_at_origin").unwrap();
        assert_eq!(v.statistic, 0.0);
        assert!(v.passed);
        assert_eq!(out.tables[0].rows.len(), 3 * 9);
    }
}
