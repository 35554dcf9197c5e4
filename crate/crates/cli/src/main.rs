//! `roughlab`: sample fast noise, build lifts and run certification experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use roughhom::container::Container;
use roughhom::hermite::{expand, HermiteProfile, Observable};
use roughhom::lab::{self, ExperimentConfig, ExperimentKind, ExperimentOutput};
use roughhom::noise::{
    sample_fbm, sample_fou, sample_markov_chain, FouMethod, Hurst, MarkovChain, StationaryEnsemble, TimeGrid,
    VolterraEnsemble, VolterraModel,
};
use roughhom::roughpath::{chen_defect, scaled_functional_lift, SlowGrid};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "roughlab", version, about = "Homogenisation experiments with fractional noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Master seed; every random stream derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of Monte Carlo paths.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Comma-separated, strictly decreasing scale parameters.
    #[arg(long, global = true, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (overrides ROUGHLAB_THREADS).
    #[arg(long, global = true, env = "ROUGHLAB_THREADS")]
    threads: Option<usize>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum NoiseKind {
    Fbm,
    Fou,
    Volterra,
    Markov,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum FieldKind {
    Identity,
    Zero,
}

#[derive(Args, Debug, Clone)]
struct ExperimentArgs {
    /// TOML config used as the starting point; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "fou")]
    noise: NoiseKind,
    #[arg(long, default_value_t = 0.7)]
    hurst: f64,
    /// Switching rate of the symmetric two-state chain (`--noise markov`).
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    /// Observable channel such as `H2` or `H2+H3`; repeatable.
    #[arg(long = "observable")]
    observables: Vec<String>,
    #[arg(long)]
    t_max: Option<f64>,
    /// Initial slow state (homogenize), comma-separated.
    #[arg(long, value_delimiter = ',')]
    x0: Option<Vec<f64>>,
    /// Vector field for every channel (homogenize).
    #[arg(long, value_enum, default_value = "identity")]
    field: FieldKind,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a stationary ensemble and write it as a binary container.
    Simulate {
        #[arg(long, value_enum, default_value = "fou")]
        noise: NoiseKind,
        #[arg(long, default_value_t = 0.7)]
        hurst: f64,
        #[arg(long, default_value_t = 1025)]
        count: usize,
        #[arg(long, default_value_t = 0.125)]
        step: f64,
        #[arg(long, default_value_t = 1.0)]
        rate: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Lift the scaled functionals of a sampled ensemble and report Chen defects.
    Lift {
        /// Container written by `simulate`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long = "observable", default_value = "H2")]
        observables: Vec<String>,
        #[arg(long, default_value_t = 1.0)]
        t_max: f64,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Residual of the discrete martingale decomposition.
    Decomp {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, default_value_t = 32.0)]
        memory: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Normality of the scaled functionals.
    VerifyClt {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Limiting covariance of the scaled functionals.
    VerifyCov {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Moment scaling of the canonical lift.
    VerifyMoments {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Self-similarity and Young solve in the long-memory regime.
    VerifyHermite {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Multiscale system against its limit equation.
    Homogenize {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Run an experiment described by a TOML config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn noise_toml(exp: &ExperimentArgs, memory: Option<f64>) -> String {
    match exp.noise {
        NoiseKind::Fou | NoiseKind::Fbm => format!("kind = \"fou\"\nhurst = {:?}\n", exp.hurst),
        NoiseKind::Volterra => {
            format!("kind = \"volterra\"\nhurst = {:?}\nmemory = {:?}\n", exp.hurst, memory.unwrap_or(32.0))
        }
        NoiseKind::Markov => {
            let r = exp.rate;
            format!("kind = \"markov\"\nrates = [[{:?}, {r:?}], [{r:?}, {:?}]]\nvalues = [-1.0, 1.0]\n", -r, -r)
        }
    }
}

fn kind_name(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::Clt => "clt",
        ExperimentKind::Covariance => "covariance",
        ExperimentKind::MomentFit => "moment_fit",
        ExperimentKind::HermiteRegime => "hermite_regime",
        ExperimentKind::Homogenize1d => "homogenize_1d",
        ExperimentKind::HomogenizeNd => "homogenize_nd",
        ExperimentKind::DecompResidual => "decomp_residual",
    }
}

/// Config from `--config` or from the flags, with the common overrides applied.
fn build_config(kind: ExperimentKind, exp: &ExperimentArgs, memory: Option<f64>, common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &exp.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => {
            let seed = common.seed.context("--seed is required when no --config is given")?;
            let observables = if exp.observables.is_empty() { vec!["H2".to_string()] } else { exp.observables.clone() };
            let mut kind = kind;
            let mut system = String::new();
            if kind == ExperimentKind::Homogenize1d {
                let x0 = exp.x0.clone().unwrap_or_else(|| vec![1.0]);
                if x0.len() > 1 {
                    kind = ExperimentKind::HomogenizeNd;
                }
                let field = match exp.field {
                    FieldKind::Identity => "{ kind = \"identity\" }",
                    FieldKind::Zero => "{ kind = \"zero\" }",
                };
                let fields = vec![field; observables.len()].join(", ");
                system = format!("[system]\nx0 = {x0:?}\nfields = [{fields}]\n");
            }
            let text = format!(
                "kind = \"{}\"\nseed = {seed}\nobservables = {observables:?}\n{}{system}[noise]\n{}",
                kind_name(kind),
                exp.t_max.map(|t| format!("t_max = {t:?}\n")).unwrap_or_default(),
                noise_toml(exp, memory),
            );
            ExperimentConfig::from_toml(&text)?
        }
    };
    apply_common(&mut cfg, common);
    if exp.config.is_some() {
        if let Some(t) = exp.t_max {
            cfg.t_max = t;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_common(cfg: &mut ExperimentConfig, common: &Common) {
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(n) = common.paths {
        cfg.n_paths = n;
    }
    if let Some(e) = &common.eps {
        cfg.epsilons = e.clone();
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
}

fn init_threads(common: &Common) {
    if let Some(n) = common.threads.filter(|&n| n > 0) {
        std::env::set_var(lab::THREADS_ENV, n.to_string());
    }
    lab::init_threads();
}

fn finish(out: &ExperimentOutput, dir: &Path) -> Result<ExitCode> {
    out.write(dir)?;
    for v in &out.report.verdicts {
        println!("{} {} = {:.6e} ({})", if v.passed { "PASS" } else { "FAIL" }, v.name, v.statistic, v.rule);
    }
    for n in &out.report.notices {
        println!("note: {n}");
    }
    println!("report written to {}", dir.join("report.json").display());
    Ok(ExitCode::from(out.exit_code() as u8))
}

fn experiment(kind: ExperimentKind, exp: &ExperimentArgs, memory: Option<f64>, common: &Common) -> Result<ExitCode> {
    init_threads(common);
    let cfg = build_config(kind, exp, memory, common)?;
    let out = lab::run_config(&cfg)?;
    finish(&out, &cfg.output_dir)
}

fn simulate(noise: NoiseKind, hurst: f64, count: usize, step: f64, rate: f64, common: &Common) -> Result<ExitCode> {
    init_threads(common);
    let seed = common.seed.context("--seed is required")?;
    let n = common.paths.unwrap_or(100);
    let grid = TimeGrid::new(step, count)?;
    let ens: StationaryEnsemble = match noise {
        NoiseKind::Fbm => sample_fbm(grid, Hurst::new(hurst)?, n, seed)?,
        NoiseKind::Fou => sample_fou(grid, Hurst::new(hurst)?, n, seed, FouMethod::ExactCovariance)?,
        NoiseKind::Volterra => {
            let model = std::sync::Arc::new(VolterraModel::fou(Hurst::new(hurst)?, step, 32.0)?);
            VolterraEnsemble::sample(model, count, n, seed)?.ensemble
        }
        NoiseKind::Markov => sample_markov_chain(grid, &MarkovChain::symmetric_two_state(rate)?, n, seed)?,
    };
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)?;
    let path = dir.join("paths.rhpc");
    ens.to_container()?.save(&path)?;
    println!("wrote {} paths of {} points to {}", n, count, path.display());
    Ok(ExitCode::SUCCESS)
}

fn profile(s: &str) -> Result<HermiteProfile> {
    let obs: Observable = s.parse()?;
    Ok(match &obs {
        Observable::Hermite(c) => HermiteProfile::from_coeffs(c.clone()),
        other => expand(other, 40)?,
    })
}

fn lift(input: &Path, observables: &[String], t_max: f64, stride: usize, common: &Common) -> Result<ExitCode> {
    init_threads(common);
    let ens = StationaryEnsemble::from_container(&Container::load(input)?)?;
    let eps = common.eps.as_ref().and_then(|e| e.first().copied()).unwrap_or(0.1);
    let profiles: Vec<HermiteProfile> = observables.iter().map(|s| profile(s)).collect::<Result<_>>()?;
    let alphas: Vec<f64> = profiles
        .iter()
        .map(|p| match (ens.h, p.rank) {
            (Some(h), Some(m)) if m >= 1 && !h.is_half() => roughhom::hermite::scaling_alpha(eps, roughhom::hermite::h_star(m, h)),
            _ => eps.powf(-0.5),
        })
        .collect();
    let slow = SlowGrid::new(ens.grid.step(), eps, t_max, stride)?;
    if slow.fast_cells + 1 > ens.grid.count() {
        bail!("ensemble covers {} fast steps but t_max/eps needs {}", ens.grid.count() - 1, slow.fast_cells);
    }
    let lifts = scaled_functional_lift(&ens, &profiles, eps, &alphas, t_max, stride)?;
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)?;
    let keep = common.paths.unwrap_or(lifts.len()).min(lifts.len());
    let seed = common.seed.unwrap_or(0);
    let mut defects = Vec::with_capacity(keep);
    for (i, l) in lifts.iter().take(keep).enumerate() {
        l.to_container()?.save(&dir.join(format!("lift_{i}.rhpc")))?;
        defects.push(chen_defect(l, 500, seed) / l.scale().max(1.0));
    }
    let summary = json!({ "epsilon": eps, "alphas": alphas, "paths": keep, "relative_chen_defect": defects });
    fs::write(dir.join("lift_summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("wrote {keep} lifts to {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn run(path: &Path, common: &Common) -> Result<ExitCode> {
    init_threads(common);
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    apply_common(&mut cfg, common);
    let out = lab::run_config(&cfg)?;
    finish(&out, &cfg.output_dir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { noise, hurst, count, step, rate, common } => simulate(*noise, *hurst, *count, *step, *rate, common),
        Command::Lift { input, observables, t_max, stride, common } => lift(input, observables, *t_max, *stride, common),
        Command::Decomp { exp, memory, common } => {
            let mut exp = exp.clone();
            exp.noise = NoiseKind::Volterra;
            experiment(ExperimentKind::DecompResidual, &exp, Some(*memory), common)
        }
        Command::VerifyClt { exp, common } => experiment(ExperimentKind::Clt, exp, None, common),
        Command::VerifyCov { exp, common } => experiment(ExperimentKind::Covariance, exp, None, common),
        Command::VerifyMoments { exp, common } => experiment(ExperimentKind::MomentFit, exp, None, common),
        Command::VerifyHermite { exp, common } => experiment(ExperimentKind::HermiteRegime, exp, None, common),
        Command::Homogenize { exp, common } => experiment(ExperimentKind::Homogenize1d, exp, None, common),
        Command::Run { config, common } => run(config, common),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
