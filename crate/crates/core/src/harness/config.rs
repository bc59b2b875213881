use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grpo::GrpoConfig;
use crate::kitchen::TaskKind;

pub const CONFIG_SCHEMA: u32 = 1;

/// Reference policy standing in for a supervised-fine-tuned start point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceKind {
    EpsilonMixture { epsilon: f64 },
    Uniform,
}

impl Default for ReferenceKind {
    fn default() -> Self {
        ReferenceKind::EpsilonMixture { epsilon: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Tabular,
    Featurized,
    #[default]
    Both,
}

/// Settings of the featurized (sampled) training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturizedConfig {
    /// Sampled layouts mixed into the training set, besides the canonical one.
    pub train_layouts: usize,
    /// Seed of the first training layout; layout `i` uses `seed + i`.
    pub train_layout_seed: u64,
    /// Off-trajectory states taken per layout, one action away from the
    /// expert path.
    pub extra_states: usize,
    pub steps: usize,
    pub temperature: f64,
}

impl Default for FeaturizedConfig {
    fn default() -> Self {
        Self {
            train_layouts: 4,
            train_layout_seed: 0,
            extra_states: 64,
            steps: 1500,
            temperature: 1.0,
        }
    }
}

/// A training/evaluation experiment, read from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub task: TaskKind,
    /// Optional layout file; the canonical layout otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<PathBuf>,
    #[serde(default = "default_layout_seed")]
    pub layout_seed: u64,
    #[serde(default = "default_layout_count")]
    pub layout_count: usize,
    #[serde(default = "default_episodes")]
    pub episodes_per_layout: usize,
    /// Defaults to the task's timeout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout: Option<usize>,
    #[serde(default)]
    pub eval_seed: u64,
    #[serde(default)]
    pub mode: TrainMode,
    #[serde(default)]
    pub reference: ReferenceKind,
    #[serde(default)]
    pub grpo: GrpoConfig,
    #[serde(default)]
    pub featurized: FeaturizedConfig,
    /// Pretrained featurized policies for `xmatrix`, by task name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub policies: BTreeMap<TaskKind, PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_layout_seed() -> u64 {
    1000
}

fn default_layout_count() -> usize {
    10
}

fn default_episodes() -> usize {
    20
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("planlab-out")
}

impl ExperimentConfig {
    pub fn new(task: TaskKind) -> Self {
        Self {
            schema: CONFIG_SCHEMA,
            task,
            layout: None,
            layout_seed: default_layout_seed(),
            layout_count: default_layout_count(),
            episodes_per_layout: default_episodes(),
            timeout: None,
            eval_seed: 0,
            mode: TrainMode::default(),
            reference: ReferenceKind::default(),
            grpo: GrpoConfig::default(),
            featurized: FeaturizedConfig::default(),
            policies: BTreeMap::new(),
            output_dir: default_output_dir(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; a relative `layout`, `output_dir` or policy path is
    /// taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(l) = cfg.layout.as_mut() {
            rebase(l);
        }
        rebase(&mut cfg.output_dir);
        cfg.policies.values_mut().for_each(rebase);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!("unsupported config schema {}", self.schema)));
        }
        if let ReferenceKind::EpsilonMixture { epsilon } = self.reference {
            if !(0.0..=1.0).contains(&epsilon) {
                return bad("epsilon must lie in [0, 1]");
            }
        }
        if self.layout_count == 0 || self.episodes_per_layout == 0 {
            return bad("layout_count and episodes_per_layout must be at least 1");
        }
        if self.timeout == Some(0) {
            return bad("timeout must be at least 1");
        }
        if !(self.featurized.temperature > 0.0) {
            return bad("featurized.temperature must be positive");
        }
        self.grpo.validate()
    }

    pub fn timeout(&self) -> usize {
        self.timeout.unwrap_or_else(|| self.task.timeout())
    }

    /// Hex sha256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_toml("schema = 1\ntask = \"burger\"\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::new(TaskKind::Burger));
        assert_eq!(cfg.timeout(), 15);
        assert_eq!(cfg.reference, ReferenceKind::EpsilonMixture { epsilon: 0.5 });
    }

    #[test]
    fn round_trips_and_hash_is_stable() {
        let mut cfg = ExperimentConfig::new(TaskKind::DoubleCheeseBurger);
        cfg.reference = ReferenceKind::Uniform;
        cfg.grpo.beta = 0.25;
        cfg.policies.insert(TaskKind::Burger, "b.json".into());
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.timeout(), 35);
        cfg.grpo.beta = 0.5;
        assert_ne!(back.hash(), cfg.hash());
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "schema = 2\ntask = \"burger\"",
            "schema = 1\ntask = \"pizza\"",
            "schema = 1\ntask = \"burger\"\nbogus = 1",
            "schema = 1\ntask = \"burger\"\n[reference]\nkind = \"epsilon_mixture\"\nepsilon = 1.5",
            "schema = 1\ntask = \"burger\"\n[grpo]\nbeta = -1.0",
            "schema = 1\ntask = \"burger\"\nlayout_count = 0",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }
}
