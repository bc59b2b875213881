use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::env::{episode_seed, rollout, Policy, TaskMdp, DEFAULT_STATE_CAP};
use crate::error::{Error, Result};
use crate::expert::{plan_optimal, ExpertPolicy};
use crate::grpo::{FeaturizedPolicy, TabularPolicy};
use crate::kitchen::{build_task, sample_layout, KitchenLayout, KitchenMdp, TaskKind};

/// Success rate, average steps over all episodes and average steps over
/// successful episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sr: f64,
    pub asat: f64,
    /// `None` when no episode succeeded.
    pub asst: Option<f64>,
    pub episodes: usize,
    pub successes: usize,
    /// Episodes that reached a state the policy does not cover.
    pub coverage_failures: usize,
    pub timeout: usize,
}

impl Metrics {
    /// Aggregates `(success, turns)` pairs. Failed episodes count at the
    /// timeout.
    pub fn from_episodes(episodes: &[(bool, usize)], coverage_failures: usize, timeout: usize) -> Self {
        let n = episodes.len();
        let wins: Vec<usize> = episodes.iter().filter(|e| e.0).map(|e| e.1).collect();
        let total: usize = episodes
            .iter()
            .map(|&(ok, t)| if ok { t } else { timeout })
            .sum();
        Self {
            sr: wins.len() as f64 / n as f64,
            asat: total as f64 / n as f64,
            asst: (!wins.is_empty()).then(|| wins.iter().sum::<usize>() as f64 / wins.len() as f64),
            episodes: n,
            successes: wins.len(),
            coverage_failures,
            timeout,
        }
    }

    pub fn sr_cell(&self) -> String {
        format!("{:.3}", self.sr)
    }

    pub fn asat_cell(&self) -> String {
        format!("{:.2}", self.asat)
    }

    /// `---` when there were no successful episodes.
    pub fn asst_cell(&self) -> String {
        self.asst.map_or_else(|| "---".to_string(), |x| format!("{x:.2}"))
    }

    /// Checks `0 <= sr <= 1`, `asst <= asat <= timeout`,
    /// `sr = 0 <=> asst absent` and `asat = timeout` when `sr = 0`.
    pub fn check_algebra(&self) -> std::result::Result<(), String> {
        if !(0.0..=1.0).contains(&self.sr) {
            return Err(format!("sr {} outside [0, 1]", self.sr));
        }
        if self.asat > self.timeout as f64 {
            return Err(format!("asat {} exceeds timeout {}", self.asat, self.timeout));
        }
        match self.asst {
            Some(x) if x > self.asat => return Err(format!("asst {x} exceeds asat {}", self.asat)),
            Some(_) if self.sr == 0.0 => return Err("asst present with sr = 0".into()),
            None if self.sr > 0.0 => return Err("asst absent with sr > 0".into()),
            _ => {}
        }
        if self.sr == 0.0 && self.asat != self.timeout as f64 {
            return Err(format!("sr = 0 but asat {} != timeout", self.asat));
        }
        if self.sr == 0.0 && self.asst_cell() != "---" {
            return Err("sr = 0 must render asst as ---".into());
        }
        Ok(())
    }
}

/// A policy loaded for evaluation.
pub enum AnyPolicy {
    Tabular(TabularPolicy),
    Featurized(FeaturizedPolicy),
    /// Replays the planner's optimal trajectory on every layout.
    Expert,
}

impl AnyPolicy {
    /// `expert`, or a tabular/featurized policy JSON file.
    pub fn load(spec: &str) -> Result<Self> {
        if spec == "expert" {
            return Ok(AnyPolicy::Expert);
        }
        let text = std::fs::read_to_string(Path::new(spec))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if value.get("weights").is_some() {
            Ok(AnyPolicy::Featurized(FeaturizedPolicy::from_json(&text)?))
        } else if value.get("states").is_some() {
            Ok(AnyPolicy::Tabular(TabularPolicy::from_json(&text)?))
        } else {
            Err(Error::Config(format!("{spec} is not a policy file")))
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            AnyPolicy::Tabular(_) => "tabular",
            AnyPolicy::Featurized(_) => "featurized",
            AnyPolicy::Expert => "expert",
        }
    }
}

/// Layouts a policy is evaluated on: the training layout for tabular
/// policies, held-out sampled layouts otherwise.
pub fn evaluation_layouts(policy: &AnyPolicy, task: TaskKind, cfg: &ExperimentConfig) -> Result<Vec<KitchenLayout>> {
    Ok(match policy {
        AnyPolicy::Tabular(_) => vec![match &cfg.layout {
            Some(p) if task == cfg.task => KitchenLayout::load(p)?,
            _ => KitchenLayout::canonical(task),
        }],
        _ => (0..cfg.layout_count as u64)
            .map(|i| sample_layout(task, cfg.layout_seed + i))
            .collect(),
    })
}

/// Runs the configured episodes with the task timeout and aggregates
/// SR/ASAT/ASST.
pub fn evaluate(policy: &AnyPolicy, task: TaskKind, cfg: &ExperimentConfig) -> Result<Metrics> {
    let timeout = if task == cfg.task { cfg.timeout() } else { task.timeout() };
    let layouts = evaluation_layouts(policy, task, cfg)?;
    let per_layout = match policy {
        AnyPolicy::Tabular(_) => cfg.episodes_per_layout * cfg.layout_count,
        _ => cfg.episodes_per_layout,
    };
    let mut episodes = Vec::new();
    let mut coverage_failures = 0;
    for (li, layout) in layouts.iter().enumerate() {
        let mdp = build_task(task, layout)?;
        let replay;
        let pi: &dyn Policy = match policy {
            AnyPolicy::Tabular(p) => p,
            AnyPolicy::Featurized(p) => p,
            AnyPolicy::Expert => {
                let traj = plan_optimal(&mdp, &mdp.initial_state(), DEFAULT_STATE_CAP)?;
                replay = ExpertPolicy::from_trajectory(&traj);
                &replay
            }
        };
        let base = (li * per_layout) as u64;
        let (eps, missing) = run_layout(&mdp, pi, timeout, per_layout, cfg.eval_seed, base)?;
        episodes.extend(eps);
        coverage_failures += missing;
    }
    Ok(Metrics::from_episodes(&episodes, coverage_failures, timeout))
}

fn run_layout(
    mdp: &KitchenMdp,
    pi: &dyn Policy,
    timeout: usize,
    n: usize,
    seed: u64,
    base: u64,
) -> Result<(Vec<(bool, usize)>, usize)> {
    let s0 = mdp.initial_state();
    let results: Vec<Result<Option<(bool, usize)>>> = (0..n as u64)
        .into_par_iter()
        .map(|j| match rollout(mdp, pi, &s0, timeout, episode_seed(seed, base + j)) {
            Ok(o) => Ok(Some((o.trajectory.success, o.turns_used))),
            Err(Error::PolicyStateMissing(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    let mut missing = 0;
    for r in results {
        match r? {
            Some(e) => out.push(e),
            None => {
                missing += 1;
                out.push((false, timeout));
            }
        }
    }
    Ok((out, missing))
}

/// `task,policy,episodes,sr,asat,asst,coverage_failures,timeout`.
pub fn metrics_csv(rows: &[(TaskKind, &str, &Metrics)]) -> String {
    let mut out = String::from("task,policy,episodes,sr,asat,asst,coverage_failures,timeout\n");
    for (task, label, m) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            task.name(),
            label,
            m.episodes,
            m.sr_cell(),
            m.asat_cell(),
            m.asst_cell(),
            m.coverage_failures,
            m.timeout
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn no_success_renders_dashes() {
        let m = Metrics::from_episodes(&[(false, 7), (false, 35)], 0, 35);
        assert_eq!((m.sr, m.asat, m.asst), (0.0, 35.0, None));
        assert_eq!(m.asst_cell(), "---");
        m.check_algebra().unwrap();
    }

    #[test]
    fn mixed_episodes() {
        let m = Metrics::from_episodes(&[(true, 10), (false, 3), (true, 12), (false, 15)], 1, 15);
        assert_eq!(m.sr, 0.5);
        assert_eq!(m.asat, (10.0 + 15.0 + 12.0 + 15.0) / 4.0);
        assert_eq!(m.asst, Some(11.0));
        assert_eq!(m.asst_cell(), "11.00");
        m.check_algebra().unwrap();
    }

    #[test]
    fn algebra_check_catches_inconsistent_rows() {
        let mut m = Metrics::from_episodes(&[(true, 10)], 0, 15);
        m.asst = None;
        assert!(m.check_algebra().is_err());
        let mut m = Metrics::from_episodes(&[(false, 3)], 0, 15);
        m.asat = 3.0;
        assert!(m.check_algebra().is_err());
    }

    #[test]
    fn expert_evaluates_perfectly() {
        let mut cfg = ExperimentConfig::new(TaskKind::Burger);
        cfg.layout_count = 3;
        cfg.episodes_per_layout = 2;
        let m = evaluate(&AnyPolicy::Expert, TaskKind::Burger, &cfg).unwrap();
        assert_eq!(m.sr, 1.0);
        assert_eq!(m.asst, Some(10.0));
        assert_eq!(m.episodes, 6);
    }

    #[test]
    fn uncovered_tabular_episodes_are_tallied() {
        let cfg = ExperimentConfig::new(TaskKind::CheeseSandwich);
        let m = evaluate(&AnyPolicy::Tabular(TabularPolicy::new()), TaskKind::CheeseSandwich, &cfg).unwrap();
        assert_eq!(m.coverage_failures, m.episodes);
        assert_eq!(m.episodes, 200);
        assert_eq!(m.asst_cell(), "---");
        m.check_algebra().unwrap();
    }

    proptest! {
        #[test]
        fn prop_metric_algebra(
            eps in prop::collection::vec((any::<bool>(), 1usize..=35), 1..60),
            timeout in 35usize..40,
        ) {
            let m = Metrics::from_episodes(&eps, 0, timeout);
            prop_assert!(m.check_algebra().is_ok(), "{:?}", m.check_algebra());
        }
    }
}
