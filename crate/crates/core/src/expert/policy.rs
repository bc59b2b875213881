use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::ExpertTrajectory;
use crate::env::{ActionId, Policy, StateGraph, StateKey, TaskMdp};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    OnTrajectory,
    Replanned,
    /// Goal unreachable; mapped to the lowest valid action.
    DeadEnd,
}

/// Deterministic expert over a set of states.
#[derive(Clone, Debug, Default)]
pub struct ExpertPolicy {
    action_of: HashMap<StateKey, (ActionId, Provenance)>,
    dead_ends: Vec<StateKey>,
}

impl ExpertPolicy {
    /// Expert defined on the trajectory states only.
    pub fn from_trajectory(traj: &ExpertTrajectory) -> Self {
        let mut action_of = HashMap::new();
        for (s, a) in &traj.steps.steps {
            action_of
                .entry(s.clone())
                .or_insert((*a, Provenance::OnTrajectory));
        }
        Self {
            action_of,
            dead_ends: Vec::new(),
        }
    }

    pub fn action_of(&self, s: &StateKey) -> Option<ActionId> {
        self.action_of.get(s).map(|e| e.0)
    }

    pub fn provenance(&self, s: &StateKey) -> Option<Provenance> {
        self.action_of.get(s).map(|e| e.1)
    }

    /// Action with reward 1 in `s`, or `None` for dead ends.
    pub fn rewarded_action(&self, s: &StateKey) -> Result<Option<ActionId>> {
        match self.action_of.get(s) {
            Some((_, Provenance::DeadEnd)) => Ok(None),
            Some((a, _)) => Ok(Some(*a)),
            None => Err(Error::ExpertCoverageMissing(s.clone())),
        }
    }

    pub fn covers(&self, s: &StateKey) -> bool {
        self.action_of.contains_key(s)
    }

    pub fn is_dead_end(&self, s: &StateKey) -> bool {
        self.provenance(s) == Some(Provenance::DeadEnd)
    }

    /// Dead-end states in key order.
    pub fn dead_ends(&self) -> &[StateKey] {
        &self.dead_ends
    }

    pub fn len(&self) -> usize {
        self.action_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.action_of.is_empty()
    }

    /// Covered states in key order.
    pub fn states(&self) -> Vec<StateKey> {
        let mut v: Vec<_> = self.action_of.keys().cloned().collect();
        v.sort();
        v
    }

    /// `Err(DeadEnds)` listing every dead end, if there are any.
    pub fn require_live(&self) -> Result<()> {
        if self.dead_ends.is_empty() {
            Ok(())
        } else {
            Err(Error::DeadEnds(self.dead_ends.clone()))
        }
    }
}

impl Policy for ExpertPolicy {
    fn distribution(
        &self,
        _mdp: &dyn TaskMdp,
        s: &StateKey,
        valid: &[ActionId],
    ) -> Result<Vec<f64>> {
        let a = self
            .action_of(s)
            .ok_or_else(|| Error::PolicyStateMissing(s.clone()))?;
        Ok(valid.iter().map(|&b| if b == a { 1.0 } else { 0.0 }).collect())
    }
}

/// Minimal remaining turns per graph node by backward breadth-first search
/// from the states that can complete in one action.
pub(crate) fn backward_min_turns(graph: &StateGraph) -> Vec<Option<u32>> {
    let n = graph.len();
    let preds = graph.predecessors();
    let mut dist = vec![None; n];
    let mut queue = VecDeque::new();
    for (i, d) in dist.iter_mut().enumerate() {
        if graph.edges(i).iter().any(|e| e.completes) {
            *d = Some(0);
            queue.push_back(i);
        }
    }
    while let Some(j) = queue.pop_front() {
        let dj = dist[j].unwrap();
        for &p in &preds[j] {
            let p = p as usize;
            if dist[p].is_none() {
                dist[p] = Some(dj + 1);
                queue.push_back(p);
            }
        }
    }
    dist
}

/// Extends the trajectory's actions to `states` and everything reachable
/// from them: off the trajectory each state gets the first action of its
/// re-rooted optimal plan under the same tie-break rule. Dead ends are
/// recorded and mapped to their lowest valid action.
pub fn complete_expert_policy(
    mdp: &dyn TaskMdp,
    traj: &ExpertTrajectory,
    states: &[StateKey],
    cap: usize,
) -> Result<ExpertPolicy> {
    let mut roots: Vec<StateKey> = traj.states().cloned().collect();
    roots.extend(states.iter().cloned());
    let graph = StateGraph::explore(mdp, &roots, cap)?;
    let dist = backward_min_turns(&graph);
    let mut policy = ExpertPolicy::from_trajectory(traj);
    for i in 0..graph.len() {
        let s = graph.state(i);
        if policy.covers(s) {
            continue;
        }
        let edges = graph.edges(i);
        let entry = match dist[i] {
            None => {
                policy.dead_ends.push(s.clone());
                (edges[0].action, Provenance::DeadEnd)
            }
            Some(0) => (
                edges.iter().find(|e| e.completes).unwrap().action,
                Provenance::Replanned,
            ),
            Some(d) => (
                edges
                    .iter()
                    .find(|e| !e.completes && dist[e.next as usize] == Some(d - 1))
                    .unwrap()
                    .action,
                Provenance::Replanned,
            ),
        };
        policy.action_of.insert(s.clone(), entry);
    }
    policy.dead_ends.sort();
    Ok(policy)
}

/// Single-turn reward: 1 iff `a` is the expert action in `s`.
pub fn step_reward(
    mdp: &dyn TaskMdp,
    expert: &ExpertPolicy,
    s: &StateKey,
    a: ActionId,
) -> Result<u8> {
    if mdp.valid_actions(s).binary_search(&a).is_err() {
        return Err(Error::InvalidAction {
            state: s.clone(),
            action: a,
        });
    }
    Ok(u8::from(expert.rewarded_action(s)? == Some(a)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{rollout, step, ChainMdp, DEFAULT_STATE_CAP};
    use crate::expert::plan_optimal;
    use crate::kitchen::{build_task, KitchenAction, KitchenLayout, TaskKind};

    fn chain_setup() -> (ChainMdp, ExpertTrajectory, ExpertPolicy) {
        let chain = ChainMdp::new(3);
        let s0 = chain.initial_state();
        let tr = plan_optimal(&chain, &s0, DEFAULT_STATE_CAP).unwrap();
        let ex = complete_expert_policy(&chain, &tr, &[s0], DEFAULT_STATE_CAP).unwrap();
        (chain, tr, ex)
    }

    #[test]
    fn trajectory_states_keep_their_actions() {
        let (_, tr, ex) = chain_setup();
        for (s, a) in &tr.steps.steps {
            assert_eq!(ex.action_of(s), Some(*a));
            assert_eq!(ex.provenance(s), Some(Provenance::OnTrajectory));
        }
    }

    #[test]
    fn dead_ends_map_to_lowest_action_and_earn_nothing() {
        let (chain, _, ex) = chain_setup();
        let stuck = chain.stuck(1);
        assert!(ex.is_dead_end(&stuck));
        assert_eq!(ex.action_of(&stuck), Some(ChainMdp::NOOP));
        assert_eq!(step_reward(&chain, &ex, &stuck, ChainMdp::NOOP).unwrap(), 0);
        // the three stuck states and the post-completion end of the chain
        assert_eq!(ex.dead_ends().len(), 4);
        assert!(matches!(ex.require_live(), Err(Error::DeadEnds(v)) if v.len() == 4));
    }

    #[test]
    fn step_reward_checks() {
        let (chain, _, ex) = chain_setup();
        let s0 = chain.initial_state();
        assert_eq!(step_reward(&chain, &ex, &s0, ChainMdp::ADVANCE).unwrap(), 1);
        assert_eq!(step_reward(&chain, &ex, &s0, ChainMdp::NOOP).unwrap(), 0);
        assert!(matches!(
            step_reward(&chain, &ex, &s0, ActionId(9)),
            Err(Error::InvalidAction { .. })
        ));
        let foreign = ChainMdp::new(5).state(4);
        assert!(step_reward(&ChainMdp::new(5), &ex, &foreign, ChainMdp::ADVANCE).is_err());
    }

    #[test]
    fn one_wrong_move_is_replanned() {
        let kind = TaskKind::Burger;
        let mdp = build_task(kind, &KitchenLayout::canonical(kind)).unwrap();
        let s0 = mdp.initial_state();
        let tr = plan_optimal(&mdp, &s0, DEFAULT_STATE_CAP).unwrap();
        let ex = complete_expert_policy(&mdp, &tr, &[s0.clone()], DEFAULT_STATE_CAP).unwrap();
        let wrong = mdp
            .valid_actions(&s0)
            .into_iter()
            .find(|&a| a != tr.pair(0).1 && a != KitchenAction::Plate.id())
            .unwrap();
        let off = step(&mdp, &s0, wrong).unwrap();
        assert_eq!(ex.provenance(&off), Some(Provenance::Replanned));
        let oracle = plan_optimal(&mdp, &off, DEFAULT_STATE_CAP).unwrap();
        assert_eq!(ex.action_of(&off), Some(oracle.pair(0).1));
        assert_eq!(step_reward(&mdp, &ex, &off, oracle.pair(0).1).unwrap(), 1);
        let out = rollout(&mdp, &ex, &off, 64, 0).unwrap();
        assert!(out.trajectory.success);
        assert_eq!(out.turns_used, oracle.len());
    }

    #[test]
    fn exactly_one_rewarded_action_per_live_state() {
        let (chain, _, ex) = chain_setup();
        for s in ex.states() {
            let rewarded: u32 = chain
                .valid_actions(&s)
                .into_iter()
                .map(|a| u32::from(step_reward(&chain, &ex, &s, a).unwrap()))
                .sum();
            assert_eq!(rewarded, u32::from(!ex.is_dead_end(&s)));
        }
    }
}
