//! Experiment configuration (JSON).

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use regretlab_core::envs::EnvSpec;
use regretlab_core::learner::{self, EviEpsilon};
use regretlab_core::{AmbientSet, EpisodeRule, Family, Mdp, RegionSpec, RunConfig, RunTrace, Schedule};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::instance::{self, InstanceFile};
use crate::LabError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: EnvConfig,
    pub algorithms: Vec<AlgorithmSpec>,
    pub horizon: u64,
    pub seeds: SeedSpec,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
    #[serde(default)]
    pub analyses: Vec<AnalysisSpec>,
}

fn default_outputs() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    Figure2Left,
    Figure2Right,
    Figure7Cycles,
    Riverswim {
        n: usize,
    },
    RandomErgodic {
        states: usize,
        actions: usize,
        seed: u64,
    },
    /// An instance file; the ambient is a preset name or an ambient file
    /// (default `free`).
    Instance {
        path: PathBuf,
        #[serde(default)]
        ambient: Option<String>,
    },
}

/// A built environment.
#[derive(Clone, Debug)]
pub struct Environment {
    pub id: String,
    pub mdp: Mdp,
    pub ambient: AmbientSet,
}

impl EnvConfig {
    pub fn build(&self) -> Result<Environment, LabError> {
        let spec = match *self {
            Self::Figure2Left => EnvSpec::Figure2Left,
            Self::Figure2Right => EnvSpec::Figure2Right,
            Self::Figure7Cycles => EnvSpec::Figure7Cycles,
            Self::Riverswim { n } => EnvSpec::RiverSwim(n),
            Self::RandomErgodic { states, actions, seed } => EnvSpec::RandomErgodic {
                n_states: states,
                n_actions: actions,
                seed,
            },
            Self::Instance { ref path, ref ambient } => {
                let mdp = InstanceFile::read(path)?.to_mdp()?;
                let ambient = instance::load_ambient(ambient.as_deref().unwrap_or("free"), &mdp)?;
                let stem = path.file_stem().map_or_else(|| "instance".into(), |s| s.to_string_lossy().into_owned());
                return Ok(Environment {
                    id: format!("instance_{stem}"),
                    mdp,
                    ambient,
                });
            }
        };
        let (mdp, ambient) = spec.build()?;
        Ok(Environment {
            id: spec.id(),
            mdp,
            ambient,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Learner {
    /// KL regions.
    Klucrl,
    /// L1 regions.
    Ucrl2,
    /// Bernstein regions.
    Ucrl2b,
    /// Known deterministic kernel, Hoeffding rewards, doubling trick.
    Ucycle,
}

impl Learner {
    pub fn family(self) -> Family {
        match self {
            Self::Klucrl => Family::Kl,
            Self::Ucrl2 | Self::Ucycle => Family::L1,
            Self::Ucrl2b => Family::Bernstein,
        }
    }
}

/// Episode rule as written in configs: `dt`, `vm:sqrt_log_over_t`,
/// `vm:inv_log_sq` or `vm:const:<c>`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RuleSpec(pub EpisodeRule);

impl Default for RuleSpec {
    fn default() -> Self {
        Self(EpisodeRule::Dt)
    }
}

impl TryFrom<String> for RuleSpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<RuleSpec> for String {
    fn from(r: RuleSpec) -> String {
        r.to_string()
    }
}

impl std::str::FromStr for RuleSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let rule = match s {
            "dt" => EpisodeRule::Dt,
            "vm:sqrt_log_over_t" => EpisodeRule::Vm(Schedule::SqrtLogOverT),
            "vm:inv_log_sq" => EpisodeRule::Vm(Schedule::InvLogSq),
            _ => {
                let c = s
                    .strip_prefix("vm:const:")
                    .and_then(|c| c.parse::<f64>().ok())
                    .ok_or_else(|| format!("unknown episode rule `{s}`"))?;
                if !(c > 0.0 && c <= 1.0) {
                    return Err(format!("constant schedule must lie in (0, 1], got {c}"));
                }
                EpisodeRule::Vm(Schedule::Const(c))
            }
        };
        Ok(Self(rule))
    }
}

impl fmt::Display for RuleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            EpisodeRule::Dt => f.write_str("dt"),
            EpisodeRule::Vm(Schedule::Const(c)) => write!(f, "vm:const:{c}"),
            EpisodeRule::Vm(s) => write!(f, "vm:{}", s.name()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AmbientChoice {
    /// The environment's own ambient set.
    #[default]
    Env,
    Free,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub name: String,
    pub learner: Learner,
    #[serde(default)]
    pub rule: RuleSpec,
    #[serde(default = "one")]
    pub radius_scale: f64,
    #[serde(default)]
    pub ambient: AmbientChoice,
    /// Fixed EVI precision; `1/sqrt(t_k)` when absent.
    #[serde(default)]
    pub evi_epsilon: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl AlgorithmSpec {
    pub fn new(name: &str, learner: Learner, rule: EpisodeRule) -> Self {
        Self {
            name: name.into(),
            learner,
            rule: RuleSpec(rule),
            radius_scale: 1.0,
            ambient: AmbientChoice::Env,
            evi_epsilon: None,
        }
    }

    pub fn run_config(&self, env: &Environment, horizon: u64, seed: u64) -> RunConfig {
        let ambient = match self.ambient {
            AmbientChoice::Env => env.ambient.clone(),
            AmbientChoice::Free => AmbientSet::free(env.mdp.layout()),
        };
        let region = RegionSpec::new(self.learner.family(), ambient).with_scale(self.radius_scale);
        let mut cfg = RunConfig::new(horizon, seed, region, self.rule.0);
        if let Some(eps) = self.evi_epsilon {
            cfg.evi_epsilon = EviEpsilon::Fixed(eps);
        }
        cfg
    }

    pub fn run(&self, env: &Environment, horizon: u64, seed: u64) -> Result<RunTrace, learner::LearnError> {
        let cfg = self.run_config(env, horizon, seed);
        match self.learner {
            Learner::Ucycle => learner::run_ucycle(&env.mdp, &cfg, &env.id),
            _ => learner::run_learner(&env.mdp, &cfg, &env.id),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    /// Seeds `0..n`.
    Count(u64),
    List(Vec<u64>),
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            Self::Count(n) => (0..*n).collect(),
            Self::List(list) => list.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnalysisSpec {
    Regret,
    RegexpProxy { psi: u64, window: u64 },
    VisitRegime,
    ExplorationTimes,
}

impl ExperimentConfig {
    pub fn read(path: &Path) -> Result<Self, LabError> {
        let cfg: Self = instance::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let bad = |field: &str, msg: String| Err(LabError::Invalid(format!("field `{field}`: {msg}")));
        if !is_path_component(&self.name) {
            return bad("name", format!("`{}` is not a plain directory name", self.name));
        }
        if self.horizon == 0 {
            return bad("horizon", "must be at least 1".into());
        }
        if self.algorithms.is_empty() {
            return bad("algorithms", "at least one algorithm is required".into());
        }
        let mut names = BTreeSet::new();
        for (i, a) in self.algorithms.iter().enumerate() {
            if !is_path_component(&a.name) {
                return bad(&format!("algorithms[{i}].name"), format!("`{}` is not a plain directory name", a.name));
            }
            if !names.insert(a.name.as_str()) {
                return bad(&format!("algorithms[{i}].name"), format!("duplicate name `{}`", a.name));
            }
            if !(a.radius_scale > 0.0 && a.radius_scale.is_finite()) {
                return bad(&format!("algorithms[{i}].radius_scale"), format!("must be positive, got {}", a.radius_scale));
            }
            if let Some(eps) = a.evi_epsilon {
                if !(eps > 0.0) {
                    return bad(&format!("algorithms[{i}].evi_epsilon"), format!("must be positive, got {eps}"));
                }
            }
        }
        let seeds = self.seeds.seeds();
        if seeds.is_empty() {
            return bad("seeds", "at least one seed is required".into());
        }
        let mut seen = BTreeSet::new();
        for s in &seeds {
            if !seen.insert(s) {
                return bad("seeds", format!("duplicate seed {s}"));
            }
        }
        for (i, a) in self.analyses.iter().enumerate() {
            match *a {
                AnalysisSpec::RegexpProxy { psi, window } => {
                    if window == 0 || psi >= self.horizon || psi + window > self.horizon {
                        return bad(
                            &format!("analyses[{i}]"),
                            format!("need window >= 1 and psi + window <= horizon, got psi {psi}, window {window}"),
                        );
                    }
                }
                AnalysisSpec::VisitRegime if self.horizon < regretlab_core::metrics::REGIME_MIN_HORIZON => {
                    return bad(
                        &format!("analyses[{i}]"),
                        format!("visit_regime needs horizon >= {}", regretlab_core::metrics::REGIME_MIN_HORIZON),
                    );
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON rendering, as hex.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("plain data serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Output root: `REGRETLAB_OUT` when set, else `outputs`.
    pub fn output_root(&self) -> PathBuf {
        std::env::var_os(crate::OUT_ENV).map_or_else(|| self.outputs.clone(), PathBuf::from)
    }
}

fn is_path_component(s: &str) -> bool {
    !s.is_empty() && s != "." && s != ".." && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExperimentConfig {
        serde_json::from_str(
            r#"{
                "name": "demo",
                "env": {"kind": "riverswim", "n": 3},
                "algorithms": [
                    {"name": "kl_dt", "learner": "klucrl"},
                    {"name": "kl_vm", "learner": "klucrl", "rule": "vm:inv_log_sq"}
                ],
                "horizon": 1000,
                "seeds": 2,
                "analyses": [{"kind": "regret"}, {"kind": "regexp_proxy", "psi": 100, "window": 50}]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn parses_and_validates() {
        let cfg = sample();
        cfg.validate().unwrap();
        assert_eq!(cfg.seeds.seeds(), vec![0, 1]);
        assert_eq!(cfg.algorithms[1].rule.0, EpisodeRule::Vm(Schedule::InvLogSq));
        assert_eq!(cfg.outputs, PathBuf::from("out"));
    }

    #[test]
    fn rule_strings_round_trip() {
        for s in ["dt", "vm:sqrt_log_over_t", "vm:inv_log_sq", "vm:const:0.5"] {
            assert_eq!(s.parse::<RuleSpec>().unwrap().to_string(), s);
        }
        assert!("vm:const:2".parse::<RuleSpec>().is_err());
        assert!("doubling".parse::<RuleSpec>().is_err());
    }

    #[test]
    fn fingerprint_tracks_every_field() {
        let base = sample();
        let mut variants = vec![base.clone()];
        let mut c = base.clone();
        c.horizon += 1;
        variants.push(c);
        let mut c = base.clone();
        c.seeds = SeedSpec::List(vec![0, 1]);
        variants.push(c);
        let mut c = base.clone();
        c.algorithms[0].radius_scale = 0.5;
        variants.push(c);
        let mut c = base.clone();
        c.outputs = PathBuf::from("elsewhere");
        variants.push(c);
        let mut c = base.clone();
        c.analyses.pop();
        variants.push(c);
        let prints: BTreeSet<String> = variants.iter().map(|c| c.fingerprint()).collect();
        assert_eq!(prints.len(), variants.len());
        assert_eq!(base.fingerprint(), sample().fingerprint());
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let mut cfg = sample();
        cfg.seeds = SeedSpec::List(vec![1, 1]);
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("seeds"), "{err}");
        let mut cfg = sample();
        cfg.algorithms[1].name = "kl_dt".into();
        assert!(cfg.validate().unwrap_err().to_string().contains("algorithms[1].name"));
        let mut cfg = sample();
        cfg.analyses = vec![AnalysisSpec::RegexpProxy { psi: 990, window: 50 }];
        assert!(cfg.validate().unwrap_err().to_string().contains("analyses[0]"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{"name": "x", "env": {"kind": "figure7_cycles"}, "algorithms": [], "horizon": 1, "seeds": 1, "colour": 3}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(text).is_err());
    }
}
