use std::collections::HashSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{ExpertPolicy, ExpertTrajectory};
use crate::env::{ActionId, StateKey, TaskMdp};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetMode {
    TrajectoryOnly,
    AllStates,
}

/// One query state of the single-turn problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub state_key: StateKey,
    pub expert_action: ActionId,
    pub valid_actions: Vec<ActionId>,
    pub weight: f64,
}

impl DatasetEntry {
    pub fn reward(&self, a: ActionId) -> u8 {
        u8::from(a == self.expert_action)
    }

    pub fn expert_index(&self) -> usize {
        self.valid_actions
            .iter()
            .position(|&a| a == self.expert_action)
            .expect("expert action is valid")
    }
}

/// Query states with expert labels and the query distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleTurnDataset {
    pub entries: Vec<DatasetEntry>,
}

impl SingleTurnDataset {
    /// Uniform weights over `entries`.
    pub fn uniform(mut entries: Vec<DatasetEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let w = 1.0 / entries.len() as f64;
        for e in &mut entries {
            e.weight = w;
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum()
    }

    pub fn states(&self) -> impl Iterator<Item = &StateKey> {
        self.entries.iter().map(|e| &e.state_key)
    }

    /// Writes `{state_key, expert_action, valid_actions, weight}` per line.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<DatasetEntry>, _>>()?;
        if entries.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { entries })
    }
}

/// Builds the single-turn dataset. `TrajectoryOnly` takes the trajectory
/// states; `AllStates` adds `extra_states`, skipping duplicates and dead
/// ends. Weights are uniform over entries.
pub fn build_dataset(
    mdp: &dyn TaskMdp,
    expert: &ExpertPolicy,
    traj: &ExpertTrajectory,
    extra_states: &[StateKey],
    mode: DatasetMode,
) -> Result<SingleTurnDataset> {
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    let mut push = |s: &StateKey, a: ActionId| {
        if seen.insert(s.clone()) {
            entries.push(DatasetEntry {
                state_key: s.clone(),
                expert_action: a,
                valid_actions: mdp.valid_actions(s),
                weight: 0.0,
            });
        }
    };
    for (s, a) in &traj.steps.steps {
        push(s, *a);
    }
    if mode == DatasetMode::AllStates {
        for s in extra_states {
            match expert.rewarded_action(s)? {
                Some(a) => push(s, a),
                None => continue,
            }
        }
    }
    SingleTurnDataset::uniform(entries)
}
