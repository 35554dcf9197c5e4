//! Residual of the discrete second-order decomposition along the schedule.

use serde_json::json;

use super::common::{epsilon_seed, invalid, Setup};
use super::config::ExperimentConfig;
use super::report::{ConvergenceReport, ExperimentOutput, Table, Verdict};
use super::source::Noise;
use super::LabError;
use crate::decomp::{area_constant, block_count, cells_per_block, residual_study, DecompError, LemmaResidual, ResidualReport};
use crate::noise::VolterraEnsemble;

/// Paths sampled at once; bounds peak memory at small `ε`.
const BATCH: usize = 64;

/// `err(ε)` for the first two channels (or a channel with itself) on the
/// finite-memory model, with `t = t_max`.
pub fn decomp_residual(cfg: &ExperimentConfig) -> Result<ExperimentOutput, LabError> {
    let setup = Setup::new(cfg)?;
    let model = match &setup.noise {
        Noise::Volterra { model } => model.clone(),
        _ => return Err(invalid("noise.kind", "decomp_residual runs on the volterra model")),
    };
    let gi = &setup.channels[0].profile;
    let gj = &setup.channels.get(1).unwrap_or(&setup.channels[0]).profile;
    let q = cells_per_block(model.step)?;
    let t = cfg.t_max;
    let mut notices = Vec::new();

    let mut reports: Vec<ResidualReport> = Vec::new();
    let mut table = Table::new("decomp_residual", &["epsilon", "median_abs_err", "iqr", "identity_max_violation"]);
    for (e, &eps) in cfg.epsilons.iter().enumerate() {
        let l = block_count(eps, t);
        let count = (l + 1) * q + model.memory_len();
        let seed = epsilon_seed(cfg.seed, e);
        let mut rows: Vec<LemmaResidual> = Vec::with_capacity(cfg.n_paths);
        let mut a_matrix = Vec::new();
        for start in (0..cfg.n_paths).step_by(BATCH) {
            let range = start..(start + BATCH).min(cfg.n_paths);
            let ens = VolterraEnsemble::sample_range(model.clone(), count, range, seed)?;
            let (rep, batch) = residual_study(&ens, gi, gj, eps, t)?;
            a_matrix = rep.a_matrix;
            rows.extend(batch);
        }
        let rep = ResidualReport::from_rows(eps, &rows, a_matrix);
        table.push(vec![eps, rep.median_abs_err, rep.iqr, rep.identity_max_violation]);
        reports.push(rep);
    }

    let continuous = match &setup.noise {
        Noise::Volterra { model } => {
            let pair = [gi, gj];
            let mut m = vec![vec![None; 2]; 2];
            for (a, pa) in pair.iter().enumerate() {
                for (b, pb) in pair.iter().enumerate() {
                    m[a][b] = match area_constant(pa, pb, model.h) {
                        Ok(v) => Some(v),
                        Err(DecompError::TailDivergent { .. }) => None,
                        Err(err) => return Err(err.into()),
                    };
                }
            }
            if m.iter().flatten().any(Option::is_none) {
                notices.push("continuous-model area constant diverges for some pair; only the discrete model's is finite".into());
            }
            m
        }
        _ => unreachable!(),
    };

    let mut verdicts: Vec<Verdict> = reports
        .iter()
        .map(|r| Verdict::at_most(format!("identity_violation[eps={}]", r.epsilon), r.identity_max_violation, cfg.tolerances.identity))
        .collect();
    for (k, w) in reports.windows(2).enumerate() {
        verdicts.push(Verdict::below(format!("median_decrease[{k}]"), w[1].median_abs_err - w[0].median_abs_err, 0.0));
    }
    let metrics = json!({
        "t": t,
        "memory": model.memory_len() as f64 * model.step,
        "reports": reports,
        "continuous_A_matrix": continuous,
    });
    Ok(ExperimentOutput { report: ConvergenceReport::new(cfg, metrics, verdicts, notices), tables: vec![table] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_satisfies_identities_and_reports_areas() {
        let cfg = ExperimentConfig::from_toml(
            "kind = \"decomp_residual\"\nseed = 4\nn_paths = 70\nepsilons = [0.5, 0.25]\nt_max = 2.0\nobservables = [\"H2\", \"H3\"]\n\
             [noise]\nkind = \"volterra\"\nhurst = 0.7\nmemory = 4.0\n",
        )
        .unwrap();
        let out = decomp_residual(&cfg).unwrap();
        for r in out.report.verdicts.iter().filter(|v| v.name.starts_with("identity")) {
            assert!(r.passed, "{r:?}");
        }
        let a = &out.report.metrics["reports"][0]["A_matrix"];
        assert_eq!(a[0][1].as_f64().unwrap(), 0.0);
        assert!(a[0][0].as_f64().unwrap() > 0.0 && a[1][1].as_f64().unwrap() > 0.0);
        assert_eq!(out.report.metrics["reports"][1]["n_paths"], 70);
        let c = &out.report.metrics["continuous_A_matrix"];
        assert!((c[0][0].as_f64().unwrap() - 3.812461179750).abs() < 1e-6);
        assert_eq!(c[0][1].as_f64().unwrap(), 0.0);
    }
}
