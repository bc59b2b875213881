//! Minimal turns and minimal-turn success probabilities.
//!
//! `P(s)` is the probability that a policy started in `s` completes the task
//! in exactly `T*(s) + 1` actions, `T*(s)` being the index offset of the
//! completing pair. Because only the expert action keeps the remaining
//! count minimal, it factorizes as
//!
//! ```text
//! P(s) = pi(a*|s) * P(f(s, a*))     P(f(s, a*)) := 1 if (s, a*) completes
//! ```
//!
//! and dead ends have `P = 0`.

mod report;

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;

use crate::env::{
    episode_seed, rollout, ActionId, Policy, StateGraph, StateKey, TaskMdp, DEFAULT_STATE_CAP,
};
use crate::error::{Error, Result};
use crate::expert::{plan_optimal, ExpertPolicy, ExpertTrajectory};
use crate::kitchen::make_subtask;

pub use report::{improvement_report, improvement_report_on_space, ImprovementReport, ImprovementSummary, StatePair};

/// Forward closure of a state set with minimal remaining turns per state.
pub struct StateSpace {
    graph: StateGraph,
    t_star: Vec<Option<u32>>,
}

impl StateSpace {
    /// Explores everything reachable from `roots` and computes `T*` by
    /// repeated relaxation `T(s) = min(0 if s completes, 1 + min_a T(f(s,a)))`
    /// until nothing changes.
    pub fn build(mdp: &dyn TaskMdp, roots: &[StateKey], cap: usize) -> Result<Self> {
        let graph = StateGraph::explore(mdp, roots, cap)?;
        let n = graph.len();
        let mut t: Vec<Option<u32>> = vec![None; n];
        loop {
            let mut changed = false;
            for i in 0..n {
                let mut best = t[i];
                for e in graph.edges(i) {
                    let cand = if e.completes {
                        Some(0)
                    } else {
                        t[e.next as usize].map(|x| x + 1)
                    };
                    if let Some(c) = cand {
                        if best.map_or(true, |b| c < b) {
                            best = Some(c);
                        }
                    }
                }
                if best != t[i] {
                    t[i] = best;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        Ok(Self { graph, t_star: t })
    }

    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }

    pub fn graph(&self) -> &StateGraph {
        &self.graph
    }

    pub fn states(&self) -> &[StateKey] {
        self.graph.states()
    }

    pub fn t_star(&self, s: &StateKey) -> Option<Option<usize>> {
        self.graph
            .index_of(s)
            .map(|i| self.t_star[i].map(|x| x as usize))
    }

    pub fn t_star_at(&self, i: usize) -> Option<usize> {
        self.t_star[i].map(|x| x as usize)
    }

    /// States from which the goal is reachable, in graph order.
    pub fn live_states(&self) -> Vec<StateKey> {
        (0..self.len())
            .filter(|&i| self.t_star[i].is_some())
            .map(|i| self.graph.state(i).clone())
            .collect()
    }

    pub fn min_turns(&self) -> MinTurnsTable {
        MinTurnsTable {
            values: (0..self.len())
                .map(|i| (self.graph.state(i).clone(), self.t_star_at(i)))
                .collect(),
        }
    }
}

/// `T*(s)` per state; `None` marks a dead end.
#[derive(Clone, Debug, Default)]
pub struct MinTurnsTable {
    values: HashMap<StateKey, Option<usize>>,
}

impl MinTurnsTable {
    /// `None` if `s` is not in the table, `Some(None)` for a dead end.
    pub fn get(&self, s: &StateKey) -> Option<Option<usize>> {
        self.values.get(s).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StateKey, Option<usize>)> {
        self.values.iter().map(|(k, v)| (k, *v))
    }
}

/// Minimal turns for `states` and everything reachable from them.
pub fn min_turns(mdp: &dyn TaskMdp, states: &[StateKey], cap: usize) -> Result<MinTurnsTable> {
    Ok(StateSpace::build(mdp, states, cap)?.min_turns())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbRow {
    pub state_key: StateKey,
    pub t_star: Option<usize>,
    pub p_value: f64,
}

/// `P(s)` for every state of a [`StateSpace`].
#[derive(Clone, Debug)]
pub struct SuccessProbTable {
    pub policy_id: String,
    rows: Vec<ProbRow>,
    index: HashMap<StateKey, usize>,
}

impl SuccessProbTable {
    pub fn get(&self, s: &StateKey) -> Option<f64> {
        self.index.get(s).map(|&i| self.rows[i].p_value)
    }

    pub fn rows(&self) -> &[ProbRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// CSV with header `state_key,t_star,p_value`, rows in key order. Dead
    /// ends have an empty `t_star`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "state_key,t_star,p_value")?;
        let mut order: Vec<&ProbRow> = self.rows.iter().collect();
        order.sort_by(|a, b| a.state_key.cmp(&b.state_key));
        for r in order {
            let t = r.t_star.map(|t| t.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{:.17e}", r.state_key, t, r.p_value)?;
        }
        Ok(())
    }
}

/// Probability `pi(a*|s)` of the rewarded action at every live state.
fn expert_factors(
    space: &StateSpace,
    mdp: &dyn TaskMdp,
    policy: &dyn Policy,
    expert: &ExpertPolicy,
) -> Result<Vec<Option<(f64, usize)>>> {
    (0..space.len())
        .into_par_iter()
        .map(|i| {
            if space.t_star[i].is_none() {
                return Ok(None);
            }
            let s = space.graph.state(i);
            let a = expert
                .rewarded_action(s)?
                .ok_or_else(|| Error::ExpertCoverageMissing(s.clone()))?;
            let edges = space.graph.edges(i);
            let k = edges
                .iter()
                .position(|e| e.action == a)
                .ok_or_else(|| Error::InvalidAction {
                    state: s.clone(),
                    action: a,
                })?;
            let valid: Vec<ActionId> = edges.iter().map(|e| e.action).collect();
            let probs = policy.distribution(mdp, s, &valid)?;
            Ok(Some((probs[k], k)))
        })
        .collect()
}

/// Fills `P` over a prebuilt state space in increasing `T*`.
pub fn dp_on_space(
    space: &StateSpace,
    mdp: &dyn TaskMdp,
    policy: &dyn Policy,
    expert: &ExpertPolicy,
    policy_id: &str,
) -> Result<SuccessProbTable> {
    let factors = expert_factors(space, mdp, policy, expert)?;
    let n = space.len();
    let mut order: Vec<usize> = (0..n).filter(|&i| space.t_star[i].is_some()).collect();
    order.sort_by_key(|&i| space.t_star[i]);
    let mut p = vec![0.0; n];
    for i in order {
        let (pi, k) = factors[i].unwrap();
        let e = space.graph.edges(i)[k];
        let t = space.t_star[i].unwrap();
        let cont = if e.completes {
            1.0
        } else {
            let next = e.next as usize;
            if space.t_star[next] != Some(t.wrapping_sub(1)) {
                return Err(Error::Config(format!(
                    "expert action in {} is not on a minimal path",
                    space.graph.state(i)
                )));
            }
            p[next]
        };
        p[i] = pi * cont;
    }
    let rows: Vec<ProbRow> = (0..n)
        .map(|i| ProbRow {
            state_key: space.graph.state(i).clone(),
            t_star: space.t_star_at(i),
            p_value: p[i],
        })
        .collect();
    let index = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.state_key.clone(), i))
        .collect();
    Ok(SuccessProbTable {
        policy_id: policy_id.to_string(),
        rows,
        index,
    })
}

/// Minimal-turn success probability of `policy` on `states` and everything
/// reachable from them.
pub fn dp_success_prob(
    mdp: &dyn TaskMdp,
    policy: &dyn Policy,
    expert: &ExpertPolicy,
    states: &[StateKey],
    cap: usize,
) -> Result<SuccessProbTable> {
    let space = StateSpace::build(mdp, states, cap)?;
    dp_on_space(&space, mdp, policy, expert, "policy")
}

/// Monte-Carlo estimate of `P(s0)` with a 4-sigma half-width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub ci_halfwidth: f64,
    pub episodes: usize,
}

/// Rolls out `episodes` episodes capped at `T*(s0) + 1` actions; episode
/// `i` uses seed `seed + i`.
pub fn mc_success_prob(
    mdp: &dyn TaskMdp,
    policy: &dyn Policy,
    s0: &StateKey,
    episodes: usize,
    seed: u64,
) -> Result<McEstimate> {
    let t_star = match plan_optimal(mdp, s0, DEFAULT_STATE_CAP) {
        Ok(tr) => tr.t_gt(),
        Err(Error::GoalUnreachable(_)) => return Err(Error::UnreachableStart(s0.clone())),
        Err(e) => return Err(e),
    };
    mc_with_cap(mdp, policy, s0, t_star + 1, episodes, seed)
}

/// Monte-Carlo success fraction within `max_turns` actions.
pub fn mc_with_cap(
    mdp: &dyn TaskMdp,
    policy: &dyn Policy,
    s0: &StateKey,
    max_turns: usize,
    episodes: usize,
    seed: u64,
) -> Result<McEstimate> {
    if episodes == 0 {
        return Err(Error::Config("episodes must be at least 1".into()));
    }
    let successes = (0..episodes as u64)
        .into_par_iter()
        .map(|i| {
            rollout(mdp, policy, s0, max_turns, episode_seed(seed, i))
                .map(|o| u64::from(o.trajectory.success))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    let p = successes as f64 / episodes as f64;
    Ok(McEstimate {
        estimate: p,
        ci_halfwidth: 4.0 * (p * (1.0 - p) / episodes as f64).sqrt(),
        episodes,
    })
}

/// `P^sub(s0)` of the subtask completed at expert pair `k_star`: the product
/// of the policy's expert-action probabilities along the subtask's minimal
/// path from its initial state.
pub fn subtask_success_prob(
    parent: &dyn TaskMdp,
    expert: &ExpertTrajectory,
    k_star: usize,
    policy: &dyn Policy,
) -> Result<f64> {
    let sub = make_subtask(parent, expert, k_star)?;
    let path = plan_optimal(&sub, &sub.initial_state(), DEFAULT_STATE_CAP)?;
    path.steps
        .steps
        .iter()
        .try_fold(1.0, |acc, (s, a)| Ok(acc * policy.prob(&sub, s, *a)?))
}
