//! Subcommand implementations. Each returns the files to write and the
//! summary; nothing here touches the file system.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use restore_core::analysis::{build_minimal_regen, kappa_star, MinimalRegen};
use restore_core::dynamics::{Dynamics, DEFAULT_EULER_STEP};
use restore_core::estimators::{report, EstimateReport};
use restore_core::experiments::{
    cauchy_cftp, mixture_jump, oracle_check, truncation_study, CauchyCftpConfig, MixtureJumpConfig, OracleCheckConfig,
    TruncationConfig,
};
use restore_core::model::{Drift, RegenDistribution, TargetModel};
use restore_core::sampler::{
    run_cftp_parallel, run_diffusion_restore_parallel, run_jump_restore_parallel, run_rejection_equivalence, CftpConfig,
    DiffusionRestore, EventKind, MetropolisRestore, Parallelism, RestoreProcess, RunLimit, Trajectory,
};
use restore_core::streams::stream;
use restore_core::RestoreError;

use crate::config::{
    build_discrete, build_target, builtin_params, echo, require, ConfigError, DynamicsSpec, Experiment, MuSpec,
    RunConfig, TargetSpec,
};

pub const VERSION: &str = match option_env!("RESTORE_GIT_DESCRIBE") {
    Some(v) => v,
    None => concat!("v", env!("CARGO_PKG_VERSION")),
};

#[derive(Debug)]
pub enum RunError {
    Config(Vec<String>),
    Model(RestoreError),
}

impl From<RestoreError> for RunError {
    fn from(e: RestoreError) -> Self {
        match e {
            RestoreError::Config(msg) => Self::Config(vec![msg]),
            other => Self::Model(other),
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.0)
    }
}

/// Files (name, contents), summary, and lines for standard output.
pub struct Outcome {
    pub files: Vec<(String, String)>,
    pub summary: Value,
    pub stdout: Vec<String>,
}

struct Summary {
    experiment: Experiment,
    seed: u64,
    config: Value,
    regen_count: Option<usize>,
    total_time: Option<f64>,
    exact: Option<bool>,
    estimator: Option<EstimateReport>,
    results: Value,
}

impl Summary {
    fn into_value(self) -> Value {
        json!({
            "experiment": self.experiment.name(),
            "seed": self.seed,
            "version": VERSION,
            "config": self.config,
            "regen_count": self.regen_count,
            "total_time": self.total_time,
            "exact": self.exact,
            "estimator": self.estimator,
            "results": self.results,
        })
    }
}

/// Default builtin parameters, used to validate `params`.
pub fn builtin_defaults(e: Experiment) -> Option<Value> {
    let v = match e {
        Experiment::MixtureJump => serde_json::to_value(MixtureJumpConfig::default()),
        Experiment::CauchyCftp => serde_json::to_value(CauchyCftpConfig::default()),
        Experiment::TruncateStudy => serde_json::to_value(TruncationConfig::default()),
        Experiment::OracleCheck => serde_json::to_value(OracleCheckConfig::default()),
        _ => return None,
    };
    Some(v.expect("defaults serialise"))
}

pub fn run(e: Experiment, cfg: &RunConfig, seed: u64, workers: usize) -> std::result::Result<Outcome, RunError> {
    let par = Parallelism::new(seed, workers);
    match e {
        Experiment::RunJump => run_jump(cfg, par),
        Experiment::RunDiffusion => run_diffusion(cfg, par),
        Experiment::Cftp => run_cftp(cfg, par),
        Experiment::Rejection => run_rejection(cfg, par),
        Experiment::MixtureJump => run_mixture(cfg, par),
        Experiment::CauchyCftp => run_cauchy(cfg, par),
        Experiment::TruncateStudy => run_truncation(cfg, par),
        Experiment::OracleCheck => run_oracle(cfg, par),
    }
}

fn missing(list: Vec<String>) -> std::result::Result<(), RunError> {
    if list.is_empty() {
        Ok(())
    } else {
        Err(RunError::Config(list))
    }
}

fn limit(cfg: &RunConfig) -> std::result::Result<RunLimit, RunError> {
    if cfg.t_max.is_none() && cfg.max_tours.is_none() && cfg.max_steps.is_none() {
        return Err(RunError::Config(vec!["one of `T_max`, `max_tours`, `max_steps` is required".into()]));
    }
    let mut l = RunLimit::unbounded();
    if let Some(t) = cfg.t_max {
        l.max_time = t;
    }
    if let Some(n) = cfg.max_tours {
        l.max_tours = n;
    }
    if let Some(n) = cfg.max_steps {
        l.max_steps = n;
    }
    Ok(l)
}

fn trajectory_summary(
    e: Experiment,
    cfg: &RunConfig,
    par: Parallelism,
    traj: &Trajectory,
    extra: BTreeMap<&'static str, Value>,
    results: Value,
) -> std::result::Result<Outcome, RunError> {
    let obs = cfg.observable.unwrap_or_default();
    if obs.index >= traj.dim() {
        return Err(RunError::Config(vec![format!("observable.index {} out of range for dimension {}", obs.index, traj.dim())]));
    }
    let estimator = report(traj, |x| obs.eval(x), cfg.exclude_first.unwrap_or(true))?;
    let mut csv = Vec::new();
    traj.write_csv(&mut csv).expect("writing to memory");
    let summary = Summary {
        experiment: e,
        seed: par.seed,
        config: echo(cfg, extra),
        regen_count: Some(traj.regen_count()),
        total_time: Some(traj.total_time()),
        exact: Some(traj.is_exact()),
        estimator: Some(estimator),
        results,
    };
    Ok(Outcome {
        files: vec![("events.csv".into(), String::from_utf8(csv).expect("ascii csv"))],
        summary: summary.into_value(),
        stdout: Vec::new(),
    })
}

fn check_dim(what: &str, got: usize, dim: usize) -> std::result::Result<(), RunError> {
    if got != dim {
        return Err(RunError::Config(vec![format!("{what} has dimension {got}, target has {dim}")]));
    }
    Ok(())
}

fn build_dynamics(spec: &DynamicsSpec, dim: usize) -> std::result::Result<Dynamics, RunError> {
    Ok(match spec {
        DynamicsSpec::Brownian => Dynamics::brownian(dim),
        DynamicsSpec::Ou { theta } => {
            check_dim("dynamics.theta", theta.len(), dim)?;
            Dynamics::ou(theta.clone())
        }
        DynamicsSpec::Euler { theta, step } => {
            check_dim("dynamics.theta", theta.len(), dim)?;
            let step = step.unwrap_or(DEFAULT_EULER_STEP);
            if !(step > 0.0) {
                return Err(RunError::Config(vec![format!("dynamics.step must be positive, got {step}")]));
            }
            Dynamics::euler(Drift::linear(theta.clone()), step, dim)
        }
        DynamicsSpec::Constant => Dynamics::constant(dim),
        DynamicsSpec::Rwm { .. } => {
            return Err(RunError::Config(vec!["rwm dynamics are a jump process: use run-jump".into()]));
        }
    })
}

enum Mu {
    Plain(RegenDistribution),
    Minimal(Arc<MinimalRegen>),
}

fn build_mu(
    spec: &MuSpec,
    target: &TargetModel,
    dynamics: Option<&Dynamics>,
    cfg: &RunConfig,
) -> std::result::Result<Mu, RunError> {
    let c = || cfg.c.ok_or_else(|| RunError::Config(vec!["missing key `C`".into()]));
    let dim = target.dim();
    Ok(match spec {
        MuSpec::Gaussian { mean, sd } => {
            check_dim("mu.mean", mean.len(), dim)?;
            Mu::Plain(RegenDistribution::gaussian(mean.clone(), sd.clone(), c()?)?)
        }
        MuSpec::Mixture { weights, means, sds } => {
            check_dim("mu", 1, dim)?;
            Mu::Plain(RegenDistribution::gaussian_mixture(weights.clone(), means.clone(), sds.clone(), c()?)?)
        }
        MuSpec::Discrete { .. } => return Err(RunError::Config(vec!["a discrete mu needs the run-jump subcommand".into()])),
        MuSpec::Minimal { box_lo, box_hi, n_grid } => {
            let mut bad = Vec::new();
            if cfg.c.is_some() {
                bad.push("key `C` conflicts with a minimal mu, whose constant is C*".to_string());
            }
            let floor = require(&cfg.kappa_floor, "kappa_floor", &mut bad);
            let drift = dynamics.and_then(Dynamics::drift);
            if drift.is_none() {
                bad.push("a minimal mu needs diffusion dynamics".into());
            }
            missing(bad)?;
            let n_grid = n_grid.unwrap_or(match dim {
                1 => 2001,
                2 => 401,
                _ => 101,
            });
            let m = build_minimal_regen(target, &drift.unwrap(), floor.unwrap(), box_lo, box_hi, n_grid)?;
            Mu::Minimal(Arc::new(m))
        }
    })
}

/// Restore process for diffusion or frozen dynamics; with a minimal `μ`
/// the rate is `κ̃ ∨ κ̲` directly.
fn build_process(cfg: &RunConfig) -> std::result::Result<(RestoreProcess, BTreeMap<&'static str, Value>), RunError> {
    let mut bad = Vec::new();
    let target_spec = require(&cfg.target, "target", &mut bad);
    let dyn_spec = require(&cfg.dynamics, "dynamics", &mut bad);
    let mu_spec = require(&cfg.mu, "mu", &mut bad);
    missing(bad)?;
    let target = build_target(&target_spec.unwrap())?;
    let dynamics = build_dynamics(&dyn_spec.unwrap(), target.dim())?;
    let mut extra = BTreeMap::new();
    let process = match build_mu(&mu_spec.unwrap(), &target, Some(&dynamics), cfg)? {
        Mu::Plain(mu) => {
            if dynamics.drift().is_some() {
                RestoreProcess::diffusion(target, mu, dynamics)?
            } else {
                RestoreProcess::frozen(target, mu)
            }
        }
        Mu::Minimal(m) => {
            let floor = cfg.kappa_floor.unwrap();
            let drift = dynamics.drift().unwrap();
            extra.insert("C_star", json!(m.c_star()));
            let rate = move |x: &[f64]| kappa_star(&target, &drift, floor, x);
            RestoreProcess::new(dynamics, Arc::new(rate), m.into_regen()?)
        }
    };
    Ok((process, extra))
}

fn run_jump(cfg: &RunConfig, par: Parallelism) -> std::result::Result<Outcome, RunError> {
    let limit = limit(cfg)?;
    let mut bad = Vec::new();
    let target = require(&cfg.target, "target", &mut bad);
    let mu = require(&cfg.mu, "mu", &mut bad);
    let c = require(&cfg.c, "C", &mut bad);
    missing(bad)?;
    let (target, mu, c) = (target.unwrap(), mu.unwrap(), c.unwrap());
    let traj = if let TargetSpec::Discrete { .. } = target {
        if cfg.dynamics.is_some() {
            return Err(RunError::Config(vec!["a discrete target uses its own generator; drop `dynamics`".into()]));
        }
        let model = build_discrete(&target, &mu, c)?;
        let x0 = match cfg.x0.as_deref() {
            None => None,
            Some([s]) if *s >= 0.0 && s.fract() == 0.0 && (*s as usize) < model.n_states() => Some(*s as usize),
            Some(other) => return Err(RunError::Config(vec![format!("x0 {other:?} is not a state index")])),
        };
        run_jump_restore_parallel(&model, x0, limit, par)?
    } else {
        let proposal_sd = match &cfg.dynamics {
            Some(DynamicsSpec::Rwm { proposal_sd }) if *proposal_sd > 0.0 => *proposal_sd,
            _ => return Err(RunError::Config(vec!["run-jump on a continuous target needs `rwm` dynamics with proposal_sd > 0".into()])),
        };
        let target = build_target(&target)?;
        let Mu::Plain(regen) = build_mu(&mu, &target, None, cfg)? else {
            return Err(RunError::Config(vec!["run-jump needs a gaussian or mixture mu".into()]));
        };
        let dim = target.dim();
        if let Some(x0) = &cfg.x0 {
            check_dim("x0", x0.len(), dim)?;
        }
        let model = MetropolisRestore {
            log_pi: Arc::new(move |x: &[f64]| target.log_density(x).unwrap_or(f64::NEG_INFINITY)),
            proposal_sd,
            regen,
            dim,
        };
        run_jump_restore_parallel(&model, cfg.x0.clone(), limit, par)?
    };
    let steps = traj
        .events()
        .filter(|ev| matches!(ev.kind, EventKind::LocalMove | EventKind::Regeneration))
        .count();
    let results = json!({
        "steps": steps,
        "regen_fraction": if steps > 0 { traj.regen_count() as f64 / steps as f64 } else { 0.0 },
    });
    trajectory_summary(Experiment::RunJump, cfg, par, &traj, BTreeMap::new(), results)
}

fn run_diffusion(cfg: &RunConfig, par: Parallelism) -> std::result::Result<Outcome, RunError> {
    let limit = limit(cfg)?;
    let mut bad = Vec::new();
    let m = require(&cfg.m, "M", &mut bad);
    missing(bad)?;
    let (process, extra) = build_process(cfg)?;
    if let Some(x0) = &cfg.x0 {
        check_dim("x0", x0.len(), process.dynamics.dim())?;
    }
    let sampler = DiffusionRestore::new(process, m.unwrap(), cfg.x0.as_deref())?;
    let traj = run_diffusion_restore_parallel(&sampler, cfg.x0.clone(), limit, par)?;
    trajectory_summary(Experiment::RunDiffusion, cfg, par, &traj, extra, json!({}))
}

fn draws_header(dim: usize, extra: &[&str]) -> String {
    let mut cols: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    cols.extend(extra.iter().map(|s| s.to_string()));
    cols.join(",") + "\n"
}

fn run_cftp(cfg: &RunConfig, par: Parallelism) -> std::result::Result<Outcome, RunError> {
    let mut bad = Vec::new();
    let floor = require(&cfg.kappa_floor, "kappa_floor", &mut bad);
    let m = require(&cfg.m, "M", &mut bad);
    let n = require(&cfg.n_draws, "n_draws", &mut bad);
    missing(bad)?;
    let (process, extra) = build_process(cfg)?;
    let dim = process.dynamics.dim();
    let cftp = CftpConfig {
        kappa_lower: floor.unwrap(),
        bound_m: m.unwrap(),
        process,
    };
    let draws = run_cftp_parallel(&cftp, n.unwrap(), par)?;
    let mut csv = draws_header(dim, &["n_candidates", "n_regenerations"]);
    for d in &draws {
        for x in &d.state {
            write!(csv, "{x},").unwrap();
        }
        writeln!(csv, "{},{}", d.n_candidates, d.n_regenerations).unwrap();
    }
    let count = draws.len() as f64;
    let summary = Summary {
        experiment: Experiment::Cftp,
        seed: par.seed,
        config: echo(cfg, extra),
        regen_count: Some(draws.iter().map(|d| d.n_regenerations).sum()),
        total_time: None,
        exact: Some(draws.iter().all(|d| d.exact)),
        estimator: None,
        results: json!({
            "n_draws": draws.len(),
            "mean_candidates": draws.iter().map(|d| d.n_candidates as f64).sum::<f64>() / count,
            "mean": mean_of(draws.iter().map(|d| d.state.as_slice()), dim),
        }),
    };
    Ok(Outcome {
        files: vec![("draws.csv".into(), csv)],
        summary: summary.into_value(),
        stdout: Vec::new(),
    })
}

fn mean_of<'a>(xs: impl Iterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    let mut n = 0.0;
    for x in xs {
        sum.iter_mut().zip(x).for_each(|(s, v)| *s += v);
        n += 1.0;
    }
    sum.into_iter().map(|s| s / n).collect()
}

fn run_rejection(cfg: &RunConfig, par: Parallelism) -> std::result::Result<Outcome, RunError> {
    let mut bad = Vec::new();
    let target = require(&cfg.target, "target", &mut bad);
    let mu = require(&cfg.mu, "mu", &mut bad);
    let m = require(&cfg.m, "M", &mut bad);
    let n = require(&cfg.n_draws, "n_draws", &mut bad);
    missing(bad)?;
    let target = build_target(&target.unwrap())?;
    let mut with_c = cfg.clone();
    with_c.c = Some(cfg.c.unwrap_or(1.0));
    let Mu::Plain(mu) = build_mu(&mu.unwrap(), &target, None, &with_c)? else {
        return Err(RunError::Config(vec!["rejection needs a gaussian or mixture mu".into()]));
    };
    let m = m.unwrap();
    let dim = target.dim();
    let mut csv = draws_header(dim, &["n_proposals"]);
    let mut total = 0usize;
    let mut states = Vec::new();
    for i in 0..n.unwrap() as u64 {
        let out = run_rejection_equivalence(&target, &mu, m, &mut stream(par.seed, i))?;
        for x in &out.draw {
            write!(csv, "{x},").unwrap();
        }
        writeln!(csv, "{}", out.n_proposals).unwrap();
        total += out.n_proposals;
        states.push(out.draw);
    }
    let count = states.len() as f64;
    let summary = Summary {
        experiment: Experiment::Rejection,
        seed: par.seed,
        config: echo(&with_c, BTreeMap::new()),
        regen_count: Some(total - states.len()),
        total_time: None,
        exact: Some(true),
        estimator: None,
        results: json!({
            "n_draws": states.len(),
            "mean_proposals": total as f64 / count,
            "mean": mean_of(states.iter().map(Vec::as_slice), dim),
        }),
    };
    Ok(Outcome {
        files: vec![("draws.csv".into(), csv)],
        summary: summary.into_value(),
        stdout: Vec::new(),
    })
}

fn params_echo<T: Serialize>(cfg: &RunConfig, params: &T) -> Value {
    let mut extra = BTreeMap::new();
    extra.insert("params", serde_json::to_value(params).expect("params serialise"));
    echo(cfg, extra)
}

fn run_mixture(cfg: &RunConfig, par: Parallelism) -> std::result::Result<Outcome, RunError> {
    let p: MixtureJumpConfig = builtin_params(&MixtureJumpConfig::default(), cfg.params.as_ref())?;
    let r = mixture_jump(&p, par)?;
    let mut hist = String::from("lo,hi,p_hat,se,p_ref\n");
    for b in 0..p.bins {
        writeln!(
            hist,
            "{},{},{},{},{}",
            r.edges[b], r.edges[b + 1], r.histogram.probs[b], r.histogram.se[b], r.reference[b]
        )
        .unwrap();
    }
    let results = json!({
        "steps": p.steps,
        "regen_fraction": r.regen_fraction,
        "tv": r.tv,
        "tv_noise": 0.5 * r.histogram.se.iter().sum::<f64>(),
    });
    let mut out = trajectory_summary(Experiment::MixtureJump, cfg, par, &r.trajectory, BTreeMap::new(), results)?;
    out.summary["config"] = params_echo(cfg, &p);
    out.files.push(("histogram.csv".into(), hist));
    Ok(out)
}

fn run_cauchy(cfg: &RunConfig, par: Parallelism) -> std::result::Result<Outcome, RunError> {
    let p: CauchyCftpConfig = builtin_params(&CauchyCftpConfig::default(), cfg.params.as_ref())?;
    let r = cauchy_cftp(&p, par)?;
    let mut draws = String::from("x\n");
    for x in &r.draws {
        writeln!(draws, "{x}").unwrap();
    }
    let mut hist = String::from("lo,hi,p_hat,p_ref\n");
    for b in 0..p.bins {
        writeln!(hist, "{},{},{},{}", r.edges[b], r.edges[b + 1], r.empirical[b], r.reference[b]).unwrap();
    }
    let summary = Summary {
        experiment: Experiment::CauchyCftp,
        seed: par.seed,
        config: params_echo(cfg, &p),
        regen_count: Some((r.mean_regenerations * r.draws.len() as f64).round() as usize),
        total_time: None,
        exact: Some(r.exact),
        estimator: None,
        results: json!({
            "n_draws": r.draws.len(),
            "C_star": r.c_star,
            "M": r.m,
            "mean_candidates": r.mean_candidates,
            "tv": r.tv,
        }),
    };
    Ok(Outcome {
        files: vec![("draws.csv".into(), draws), ("histogram.csv".into(), hist)],
        summary: summary.into_value(),
        stdout: Vec::new(),
    })
}

fn run_truncation(cfg: &RunConfig, par: Parallelism) -> std::result::Result<Outcome, RunError> {
    let p: TruncationConfig = builtin_params(&TruncationConfig::default(), cfg.params.as_ref())?;
    let rows = truncation_study(&p, par)?;
    let mut csv = String::from("M,L_M,bound_bm,bound_mc,tv_empirical,bound_mc_se,l1_empirical,l1_noise,mean_lifetime\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            r.m, r.l_m, r.bound_bm, r.bound_mc, r.tv_empirical, r.bound_mc_se, r.l1_empirical, r.l1_noise, r.mean_lifetime
        )
        .unwrap();
    }
    let summary = Summary {
        experiment: Experiment::TruncateStudy,
        seed: par.seed,
        config: params_echo(cfg, &p),
        regen_count: None,
        total_time: None,
        exact: Some(true),
        estimator: None,
        results: json!({ "rows": rows }),
    };
    Ok(Outcome {
        files: vec![("truncation.csv".into(), csv)],
        summary: summary.into_value(),
        stdout: Vec::new(),
    })
}

/// Share of models whose occupation test must pass.
pub const OCCUPATION_PASS_FRACTION: f64 = 0.95;

fn run_oracle(cfg: &RunConfig, par: Parallelism) -> std::result::Result<Outcome, RunError> {
    let p: OracleCheckConfig = builtin_params(&OracleCheckConfig::default(), cfg.params.as_ref())?;
    let s = oracle_check(&p, par)?;
    let mut csv = String::from("index,n_states,residual,stationary_error,chi2_p\n");
    for r in &s.rows {
        writeln!(csv, "{},{},{:e},{:e},{}", r.index, r.n_states, r.residual, r.stationary_error, r.chi2_p).unwrap();
    }
    let passed = s.passed(OCCUPATION_PASS_FRACTION);
    let stdout = vec![
        format!("models: {}", s.rows.len()),
        format!("max invariance residual: {:e}", s.max_residual),
        format!("max stationary-vector error: {:e}", s.max_stationary_error),
        format!("occupation tests passing: {:.3}", s.occupation_pass_fraction),
        (if passed { "PASS" } else { "FAIL" }).to_string(),
    ];
    let summary = Summary {
        experiment: Experiment::OracleCheck,
        seed: par.seed,
        config: params_echo(cfg, &p),
        regen_count: None,
        total_time: None,
        exact: Some(true),
        estimator: None,
        results: json!({
            "max_residual": s.max_residual,
            "max_stationary_error": s.max_stationary_error,
            "occupation_pass_fraction": s.occupation_pass_fraction,
            "passed": passed,
        }),
    };
    Ok(Outcome {
        files: vec![("oracle.csv".into(), csv)],
        summary: summary.into_value(),
        stdout,
    })
}

impl RunError {
    pub fn to_json(&self) -> Value {
        match self {
            Self::Config(msgs) => json!({ "error": { "kind": "config", "messages": msgs } }),
            Self::Model(e) => json!({ "error": { "kind": error_kind(e), "messages": [e.to_string()] } }),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Model(_) => 1,
        }
    }
}

fn error_kind(e: &RestoreError) -> &'static str {
    match e {
        RestoreError::Evaluation { .. } => "evaluation",
        RestoreError::NegativeRate { .. } => "negative_rate",
        RestoreError::BoundViolation { .. } => "bound_violation",
        RestoreError::AssumptionViolation { .. } => "assumption_violation",
        RestoreError::Envelope { .. } => "envelope",
        RestoreError::DegenerateClock => "degenerate_clock",
        RestoreError::ExplosionSuspected { .. } => "explosion_suspected",
        RestoreError::InsufficientData(_) => "insufficient_data",
        RestoreError::Config(_) => "config",
        RestoreError::BoxTooSmall { .. } => "box_too_small",
        RestoreError::FloorTooLow { .. } => "floor_too_low",
        RestoreError::Rank { .. } => "rank",
        RestoreError::Simulation => "simulation",
    }
}

