use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::env::{ActionId, Policy, StateKey, TaskMdp};
use crate::error::{Error, Result};

pub const POLICY_SCHEMA: u32 = 1;

/// Action distribution of one state, aligned with its valid actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateDist {
    pub actions: Vec<ActionId>,
    pub probs: Vec<f64>,
}

impl StateDist {
    pub fn uniform(actions: Vec<ActionId>) -> Self {
        let p = 1.0 / actions.len() as f64;
        let probs = vec![p; actions.len()];
        Self { actions, probs }
    }

    pub fn prob_of(&self, a: ActionId) -> f64 {
        self.actions
            .iter()
            .position(|&b| b == a)
            .map_or(0.0, |i| self.probs[i])
    }
}

/// Explicit per-state distributions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TabularPolicy {
    states: BTreeMap<StateKey, StateDist>,
}

#[derive(Serialize, Deserialize)]
struct TabularFile {
    schema: u32,
    states: Vec<TabularRecord>,
}

#[derive(Serialize, Deserialize)]
struct TabularRecord {
    state_key: StateKey,
    actions: Vec<ActionId>,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, s: StateKey, dist: StateDist) {
        self.states.insert(s, dist);
    }

    pub fn get(&self, s: &StateKey) -> Option<&StateDist> {
        self.states.get(s)
    }

    pub fn dist(&self, s: &StateKey) -> Result<&StateDist> {
        self.get(s)
            .ok_or_else(|| Error::PolicyStateMissing(s.clone()))
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StateKey, &StateDist)> {
        self.states.iter()
    }

    /// Uniform over the valid actions of each state.
    pub fn uniform(mdp: &dyn TaskMdp, states: &[StateKey]) -> Self {
        Self {
            states: states
                .iter()
                .map(|s| (s.clone(), StateDist::uniform(mdp.valid_actions(s))))
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let file = TabularFile {
            schema: POLICY_SCHEMA,
            states: self
                .states
                .iter()
                .map(|(k, d)| TabularRecord {
                    state_key: k.clone(),
                    actions: d.actions.clone(),
                    probs: d.probs.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TabularFile = serde_json::from_str(text)?;
        if file.schema != POLICY_SCHEMA {
            return Err(Error::Config(format!("unsupported policy schema {}", file.schema)));
        }
        let mut states = BTreeMap::new();
        for r in file.states {
            if r.actions.len() != r.probs.len() || r.actions.is_empty() {
                return Err(Error::Config(format!("bad distribution for {}", r.state_key)));
            }
            states.insert(
                r.state_key,
                StateDist {
                    actions: r.actions,
                    probs: r.probs,
                },
            );
        }
        Ok(Self { states })
    }
}

impl Policy for TabularPolicy {
    fn distribution(
        &self,
        _mdp: &dyn TaskMdp,
        s: &StateKey,
        valid: &[ActionId],
    ) -> Result<Vec<f64>> {
        let d = self.dist(s)?;
        if d.actions == valid {
            Ok(d.probs.clone())
        } else {
            Ok(valid.iter().map(|&a| d.prob_of(a)).collect())
        }
    }
}

/// Linear-softmax policy over state-action features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturizedPolicy {
    pub schema: u32,
    pub feature_version: u8,
    pub temperature: f64,
    pub weights: Vec<f64>,
}

impl FeaturizedPolicy {
    /// All-zero weights: uniform over valid actions.
    pub fn zeros(dim: usize, feature_version: u8, temperature: f64) -> Self {
        Self {
            schema: POLICY_SCHEMA,
            feature_version,
            temperature,
            weights: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Softmax probabilities for a block of feature rows.
    pub fn probs_from_features(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        softmax_rows(&self.weights, self.temperature, rows)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        if p.schema != POLICY_SCHEMA {
            return Err(Error::Config(format!("unsupported policy schema {}", p.schema)));
        }
        if !(p.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(p)
    }
}

pub(crate) fn softmax_rows(w: &[f64], temperature: f64, rows: &[Vec<f64>]) -> Vec<f64> {
    let logits: Vec<f64> = rows
        .iter()
        .map(|phi| dot(w, phi) / temperature)
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Policy for FeaturizedPolicy {
    fn distribution(
        &self,
        mdp: &dyn TaskMdp,
        s: &StateKey,
        valid: &[ActionId],
    ) -> Result<Vec<f64>> {
        let mut rows = Vec::with_capacity(valid.len());
        for &a in valid {
            let f = mdp.featurize(s, a)?;
            if f.schema_version != self.feature_version {
                return Err(Error::SchemaMismatch {
                    expected: self.feature_version,
                    found: f.schema_version,
                });
            }
            if f.values.len() != self.weights.len() {
                return Err(Error::Config(format!(
                    "feature length {} does not match {} weights",
                    f.values.len(),
                    self.weights.len()
                )));
            }
            rows.push(f.values);
        }
        Ok(self.probs_from_features(&rows))
    }
}
