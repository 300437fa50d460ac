//! Run configuration: JSON parsing, key validation and model construction.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use restore_core::model::{cauchy_posterior, gaussian, gaussian_mixture, DiscreteModel, TargetModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    RunJump,
    RunDiffusion,
    Cftp,
    Rejection,
    TruncateStudy,
    OracleCheck,
    CauchyCftp,
    MixtureJump,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::RunJump => "run-jump",
            Self::RunDiffusion => "run-diffusion",
            Self::Cftp => "cftp",
            Self::Rejection => "rejection",
            Self::TruncateStudy => "truncate-study",
            Self::OracleCheck => "oracle-check",
            Self::CauchyCftp => "cauchy-cftp",
            Self::MixtureJump => "mixture-jump",
        }
    }

    /// Builtins run with baked-in parameters and take no model blocks.
    pub fn is_builtin(self) -> bool {
        matches!(self, Self::TruncateStudy | Self::OracleCheck | Self::CauchyCftp | Self::MixtureJump)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetSpec {
    Gaussian { mean: Vec<f64>, sd: Vec<f64> },
    Mixture { weights: Vec<f64>, means: Vec<f64>, sds: Vec<f64> },
    CauchyPosterior { observations: Vec<f64> },
    Discrete { q: Vec<Vec<f64>>, pi: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DynamicsSpec {
    Brownian,
    Ou { theta: Vec<f64> },
    /// Euler–Maruyama for the linear drift `θx`.
    Euler { theta: Vec<f64>, step: Option<f64> },
    Constant,
    /// Random-walk Metropolis jump process with unit holding rate.
    Rwm { proposal_sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MuSpec {
    Gaussian { mean: Vec<f64>, sd: Vec<f64> },
    Mixture { weights: Vec<f64>, means: Vec<f64>, sds: Vec<f64> },
    Discrete { probs: Vec<f64> },
    /// Minimal regeneration distribution for `kappa_floor`, built on a box.
    Minimal { box_lo: Vec<f64>, box_hi: Vec<f64>, n_grid: Option<usize> },
}

/// `f(x) = x[index]^power`, the observable reported in summaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    #[serde(default)]
    pub index: usize,
    #[serde(default = "one")]
    pub power: i32,
}

fn one() -> i32 {
    1
}

impl Default for Observable {
    fn default() -> Self {
        Self { index: 0, power: 1 }
    }
}

impl Observable {
    pub fn eval(&self, x: &[f64]) -> f64 {
        x[self.index].powi(self.power)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: Option<Experiment>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub target: Option<TargetSpec>,
    pub dynamics: Option<DynamicsSpec>,
    pub mu: Option<MuSpec>,
    #[serde(rename = "C")]
    pub c: Option<f64>,
    pub kappa_floor: Option<f64>,
    #[serde(rename = "M")]
    pub m: Option<f64>,
    #[serde(rename = "T_max")]
    pub t_max: Option<f64>,
    pub max_tours: Option<usize>,
    pub max_steps: Option<usize>,
    pub n_draws: Option<usize>,
    pub x0: Option<Vec<f64>>,
    pub exclude_first: Option<bool>,
    pub observable: Option<Observable>,
    /// Overrides for a builtin's parameters.
    pub params: Option<Map<String, Value>>,
}

const TOP_KEYS: &[&str] = &[
    "experiment",
    "seed",
    "workers",
    "out_dir",
    "target",
    "dynamics",
    "mu",
    "C",
    "kappa_floor",
    "M",
    "T_max",
    "max_tours",
    "max_steps",
    "n_draws",
    "x0",
    "exclude_first",
    "observable",
    "params",
];

fn kind_keys(block: &str, kind: &str) -> Option<&'static [&'static str]> {
    Some(match (block, kind) {
        ("target", "gaussian") | ("mu", "gaussian") => &["kind", "mean", "sd"],
        ("target", "mixture") | ("mu", "mixture") => &["kind", "weights", "means", "sds"],
        ("target", "cauchy-posterior") => &["kind", "observations"],
        ("target", "discrete") => &["kind", "q", "pi"],
        ("dynamics", "brownian") | ("dynamics", "constant") => &["kind"],
        ("dynamics", "ou") => &["kind", "theta"],
        ("dynamics", "euler") => &["kind", "theta", "step"],
        ("dynamics", "rwm") => &["kind", "proposal_sd"],
        ("mu", "discrete") => &["kind", "probs"],
        ("mu", "minimal") => &["kind", "box_lo", "box_hi", "n_grid"],
        _ => return None,
    })
}

/// Every unrecognised key, as a dotted path.
pub fn unknown_keys(value: &Value, builtin_params: Option<&Map<String, Value>>) -> Vec<String> {
    let mut bad = Vec::new();
    let Some(obj) = value.as_object() else {
        return vec!["<root is not an object>".into()];
    };
    for (key, v) in obj {
        if !TOP_KEYS.contains(&key.as_str()) {
            bad.push(key.clone());
            continue;
        }
        match key.as_str() {
            "target" | "dynamics" | "mu" => {
                let Some(block) = v.as_object() else { continue };
                let kind = block.get("kind").and_then(Value::as_str).unwrap_or("");
                match kind_keys(key, kind) {
                    Some(allowed) => {
                        for k in block.keys().filter(|k| !allowed.contains(&k.as_str())) {
                            bad.push(format!("{key}.{k}"));
                        }
                    }
                    None => bad.push(format!("{key}.kind={kind:?}")),
                }
            }
            "observable" => {
                if let Some(block) = v.as_object() {
                    for k in block.keys().filter(|k| !["index", "power"].contains(&k.as_str())) {
                        bad.push(format!("observable.{k}"));
                    }
                }
            }
            "params" => {
                if let Some(block) = v.as_object() {
                    for k in block.keys() {
                        if !builtin_params.is_some_and(|p| p.contains_key(k)) {
                            bad.push(format!("params.{k}"));
                        }
                    }
                }
            }
            _ => {}
        }
    }
    bad
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub Vec<String>);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0.join("; "))
    }
}

/// Parses a config for `experiment`; `defaults` are the builtin's
/// parameters, used to validate the `params` block.
pub fn parse(text: &str, experiment: Experiment, defaults: Option<&Value>) -> Result<RunConfig, ConfigError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ConfigError(vec![format!("invalid JSON: {e}")]))?;
    let defaults = defaults.and_then(Value::as_object);
    let bad = unknown_keys(&value, defaults);
    if !bad.is_empty() {
        return Err(ConfigError(bad.into_iter().map(|k| format!("unknown key `{k}`")).collect()));
    }
    let cfg: RunConfig = serde_json::from_value(value).map_err(|e| ConfigError(vec![e.to_string()]))?;
    if let Some(e) = cfg.experiment {
        if e != experiment {
            return Err(ConfigError(vec![format!(
                "config is for `{}` but the subcommand is `{}`",
                e.name(),
                experiment.name()
            )]));
        }
    }
    if experiment.is_builtin() {
        let model_keys = [
            ("target", cfg.target.is_some()),
            ("dynamics", cfg.dynamics.is_some()),
            ("mu", cfg.mu.is_some()),
            ("C", cfg.c.is_some()),
            ("kappa_floor", cfg.kappa_floor.is_some()),
            ("M", cfg.m.is_some()),
            ("T_max", cfg.t_max.is_some()),
            ("max_tours", cfg.max_tours.is_some()),
            ("max_steps", cfg.max_steps.is_some()),
            ("n_draws", cfg.n_draws.is_some()),
            ("x0", cfg.x0.is_some()),
        ];
        let bad: Vec<String> = model_keys
            .iter()
            .filter(|(_, set)| *set)
            .map(|(k, _)| format!("key `{k}` does not apply to builtin `{}`; use `params`", experiment.name()))
            .collect();
        if !bad.is_empty() {
            return Err(ConfigError(bad));
        }
    } else if cfg.params.is_some() {
        return Err(ConfigError(vec![format!("key `params` applies only to builtins, not `{}`", experiment.name())]));
    }
    Ok(cfg)
}

/// Builtin parameters: defaults overlaid with `params`.
pub fn builtin_params<T: Serialize + for<'de> Deserialize<'de>>(defaults: &T, params: Option<&Map<String, Value>>) -> Result<T, ConfigError> {
    let mut value = serde_json::to_value(defaults).expect("builtin parameters serialise");
    if let (Some(obj), Some(params)) = (value.as_object_mut(), params) {
        for (k, v) in params {
            obj.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(value).map_err(|e| ConfigError(vec![format!("params: {e}")]))
}

pub fn require<T: Clone>(v: &Option<T>, key: &str, missing: &mut Vec<String>) -> Option<T> {
    if v.is_none() {
        missing.push(format!("missing key `{key}`"));
    }
    v.clone()
}

pub fn build_target(spec: &TargetSpec) -> restore_core::Result<TargetModel> {
    match spec {
        TargetSpec::Gaussian { mean, sd } => gaussian(mean.clone(), sd.clone()),
        TargetSpec::Mixture { weights, means, sds } => gaussian_mixture(weights.clone(), means.clone(), sds.clone()),
        TargetSpec::CauchyPosterior { observations } => cauchy_posterior(observations.clone()),
        TargetSpec::Discrete { .. } => Err(restore_core::RestoreError::Config(
            "a discrete target needs the run-jump subcommand".into(),
        )),
    }
}

pub fn build_discrete(target: &TargetSpec, mu: &MuSpec, c: f64) -> restore_core::Result<DiscreteModel> {
    match (target, mu) {
        (TargetSpec::Discrete { q, pi }, MuSpec::Discrete { probs }) => DiscreteModel::new(q.clone(), pi.clone(), probs.clone(), c),
        _ => Err(restore_core::RestoreError::Config("a discrete target needs a discrete mu".into())),
    }
}

/// Echo of the effective configuration, recorded in summaries.
pub fn echo(cfg: &RunConfig, extra: BTreeMap<&'static str, Value>) -> Value {
    let mut v = serde_json::to_value(cfg).expect("config serialises");
    if let Some(obj) = v.as_object_mut() {
        obj.retain(|_, x| !x.is_null());
        for (k, x) in extra {
            obj.insert(k.to_string(), x);
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_unknown_key_is_listed() {
        let text = r#"{"seed": 1, "sed": 2, "target": {"kind": "gaussian", "mean": [0], "sd": [1], "sdev": 1},
                       "mu": {"kind": "nope"}, "observable": {"index": 0, "pow": 2}, "colour": "red"}"#;
        let err = parse(text, Experiment::RunDiffusion, None).unwrap_err();
        let joined = err.to_string();
        for k in ["`sed`", "`target.sdev`", "`mu.kind=\"nope\"`", "`observable.pow`", "`colour`"] {
            assert!(joined.contains(k), "{joined}");
        }
        assert_eq!(err.0.len(), 5);
    }

    #[test]
    fn builtin_params_are_checked_against_defaults() {
        let defaults = serde_json::json!({"steps": 10, "c": 1.0});
        let err = parse(r#"{"params": {"steps": 5, "stepz": 5}}"#, Experiment::MixtureJump, Some(&defaults)).unwrap_err();
        assert_eq!(err.0, vec!["unknown key `params.stepz`".to_string()]);
        assert!(parse(r#"{"params": {"steps": 5}}"#, Experiment::MixtureJump, Some(&defaults)).is_ok());
        assert!(parse(r#"{"M": 3}"#, Experiment::MixtureJump, Some(&defaults)).is_err());
    }

    #[test]
    fn experiment_must_match_subcommand() {
        assert!(parse(r#"{"experiment": "cftp"}"#, Experiment::Rejection, None).is_err());
        assert!(parse(r#"{"experiment": "rejection"}"#, Experiment::Rejection, None).is_ok());
    }

    #[test]
    fn parses_model_blocks() {
        let text = r#"{"target": {"kind": "mixture", "weights": [1, 1], "means": [0, 1], "sds": [1, 1]},
                       "dynamics": {"kind": "euler", "theta": [-0.5]}, "C": 1.5, "T_max": 10}"#;
        let cfg = parse(text, Experiment::RunDiffusion, None).unwrap();
        assert_eq!(cfg.dynamics, Some(DynamicsSpec::Euler { theta: vec![-0.5], step: None }));
        assert_eq!(cfg.c, Some(1.5));
        assert_eq!(cfg.t_max, Some(10.0));
    }

    #[test]
    fn observable_defaults() {
        let o: Observable = serde_json::from_str(r#"{"power": 2}"#).unwrap();
        assert_eq!(o, Observable { index: 0, power: 2 });
        assert_eq!(o.eval(&[3.0]), 9.0);
    }
}
