use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::env::{ActionId, StateKey, TaskMdp, Trajectory};
use crate::error::{Error, Result};

pub const TIE_BREAK_RULE: &str = "breadth-first; lowest action id first at every depth";

/// How many distinct minimal-length successful trajectories exist.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Uniqueness {
    Unique,
    TiedCount(u64),
}

impl Uniqueness {
    pub fn is_unique(self) -> bool {
        self == Uniqueness::Unique
    }

    fn from_count(n: u64) -> Self {
        if n == 1 {
            Uniqueness::Unique
        } else {
            Uniqueness::TiedCount(n)
        }
    }
}

/// Minimal-length successful trajectory from the initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertTrajectory {
    pub steps: Trajectory,
    pub uniqueness: Uniqueness,
    pub tie_break_rule: String,
}

impl ExpertTrajectory {
    /// Number of state-action pairs.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Index of the completing pair, `len() - 1`.
    pub fn t_gt(&self) -> usize {
        self.len() - 1
    }

    pub fn pair(&self, i: usize) -> &(StateKey, ActionId) {
        &self.steps.steps[i]
    }

    pub fn states(&self) -> impl Iterator<Item = &StateKey> {
        self.steps.steps.iter().map(|(s, _)| s)
    }
}

/// Breadth-first search for the shortest successful trajectory from `s0`.
///
/// Layers are expanded in the order of their lexicographically smallest
/// access path and actions in ascending id, so the first completing edge
/// found closes the lexicographically smallest optimal trajectory.
pub fn plan_optimal(mdp: &dyn TaskMdp, s0: &StateKey, cap: usize) -> Result<ExpertTrajectory> {
    let mut states = vec![s0.clone()];
    let mut parents: Vec<Option<(u32, ActionId)>> = vec![None];
    let mut index: HashMap<StateKey, u32> = HashMap::from([(s0.clone(), 0)]);
    let mut head = 0;
    while head < states.len() {
        let i = head;
        head += 1;
        for t in mdp.expand(&states[i]) {
            if t.completes {
                let mut steps = vec![(states[i].clone(), t.action)];
                let mut j = i;
                while let Some((p, a)) = parents[j] {
                    j = p as usize;
                    steps.push((states[j].clone(), a));
                }
                steps.reverse();
                let t_gt = steps.len() - 1;
                let uniqueness = certify_uniqueness(mdp, s0, t_gt, cap)?;
                return Ok(ExpertTrajectory {
                    steps: Trajectory {
                        steps,
                        success: true,
                        terminal_reward: 1,
                    },
                    uniqueness,
                    tie_break_rule: TIE_BREAK_RULE.to_string(),
                });
            }
            if !index.contains_key(&t.next) {
                if states.len() >= cap {
                    return Err(Error::StateBudgetExceeded { cap });
                }
                index.insert(t.next.clone(), states.len() as u32);
                states.push(t.next);
                parents.push(Some((i as u32, t.action)));
            }
        }
    }
    Err(Error::GoalUnreachable(s0.clone()))
}

/// Counts the successful trajectories whose completing pair has index
/// `t_gt`. `t_gt` must be the optimal index.
pub fn certify_uniqueness(
    mdp: &dyn TaskMdp,
    s0: &StateKey,
    t_gt: usize,
    cap: usize,
) -> Result<Uniqueness> {
    // on an optimal trajectory every prefix is a shortest path, so only
    // first-seen states of each layer need path counts
    let mut seen: HashSet<StateKey> = HashSet::from([s0.clone()]);
    let mut layer: Vec<(StateKey, u64)> = vec![(s0.clone(), 1)];
    for depth in 0..=t_gt {
        let mut next: HashMap<StateKey, u64> = HashMap::new();
        let mut completions = 0u64;
        for (s, count) in &layer {
            for t in mdp.expand(s) {
                if t.completes {
                    completions = completions.saturating_add(*count);
                } else if depth < t_gt && !seen.contains(&t.next) {
                    let c = next.entry(t.next).or_insert(0);
                    *c = c.saturating_add(*count);
                }
            }
        }
        if depth == t_gt {
            return if completions == 0 {
                Err(Error::GoalUnreachable(s0.clone()))
            } else {
                Ok(Uniqueness::from_count(completions))
            };
        }
        if completions > 0 {
            return Err(Error::Config(format!(
                "a successful trajectory ends at index {depth} < {t_gt}"
            )));
        }
        if seen.len() + next.len() > cap {
            return Err(Error::StateBudgetExceeded { cap });
        }
        let mut fresh: Vec<_> = next.into_iter().collect();
        fresh.sort();
        for (s, _) in &fresh {
            seen.insert(s.clone());
        }
        layer = fresh;
    }
    unreachable!("loop returns at depth t_gt")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ChainMdp, TwoPathMdp, DEFAULT_STATE_CAP};

    /// One state, one completing action.
    struct OneShot;

    impl TaskMdp for OneShot {
        fn initial_state(&self) -> StateKey {
            StateKey::from_bytes(vec![0u8])
        }
        fn horizon(&self) -> usize {
            1
        }
        fn valid_actions(&self, _: &StateKey) -> Vec<ActionId> {
            vec![ActionId(0), ActionId(1)]
        }
        fn next_state(&self, _: &StateKey, _: ActionId) -> StateKey {
            StateKey::from_bytes(vec![1u8])
        }
        fn completes(&self, s: &StateKey, a: ActionId) -> bool {
            s.as_bytes() == [0] && a == ActionId(1)
        }
    }

    /// Every action sequence of length `len` over a binary alphabet.
    fn brute_force_successes(mdp: &dyn TaskMdp, len: usize) -> Vec<Vec<ActionId>> {
        fn go(
            mdp: &dyn TaskMdp,
            s: StateKey,
            left: usize,
            prefix: &mut Vec<ActionId>,
            out: &mut Vec<Vec<ActionId>>,
        ) {
            for a in mdp.valid_actions(&s) {
                prefix.push(a);
                if mdp.completes(&s, a) {
                    if left == 1 {
                        out.push(prefix.clone());
                    }
                } else if left > 1 {
                    go(mdp, mdp.next_state(&s, a), left - 1, prefix, out);
                }
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        go(mdp, mdp.initial_state(), len, &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn chain_expert_is_all_advances() {
        let chain = ChainMdp::new(3);
        let tr = plan_optimal(&chain, &chain.initial_state(), DEFAULT_STATE_CAP).unwrap();
        assert_eq!(tr.len(), 3);
        assert_eq!(tr.t_gt(), 2);
        assert_eq!(tr.uniqueness, Uniqueness::Unique);
        assert!(tr.steps.steps.iter().all(|(_, a)| *a == ChainMdp::ADVANCE));
        assert!(tr.steps.is_consistent(&chain));
        for len in 1..3 {
            assert!(brute_force_successes(&chain, len).is_empty());
        }
        assert_eq!(brute_force_successes(&chain, 3).len(), 1);
    }

    #[test]
    fn one_step_task() {
        let tr = plan_optimal(&OneShot, &OneShot.initial_state(), 10).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.t_gt(), 0);
        assert_eq!(tr.pair(0).1, ActionId(1));
        assert_eq!(
            certify_uniqueness(&OneShot, &OneShot.initial_state(), 0, 10).unwrap(),
            Uniqueness::Unique
        );
    }

    #[test]
    fn symmetric_routes_are_tied() {
        let m = TwoPathMdp;
        let tr = plan_optimal(&m, &m.initial_state(), DEFAULT_STATE_CAP).unwrap();
        assert_eq!(tr.uniqueness, Uniqueness::TiedCount(2));
        assert_eq!(brute_force_successes(&m, 2).len(), 2);
        // lexicographic tie-break takes the lower action first
        assert_eq!(tr.pair(0).1, TwoPathMdp::LEFT);
    }

    #[test]
    fn unreachable_goal_is_reported() {
        let chain = ChainMdp::new(3);
        let err = plan_optimal(&chain, &chain.stuck(0), DEFAULT_STATE_CAP).unwrap_err();
        assert!(matches!(err, Error::GoalUnreachable(_)));
    }

    #[test]
    fn budget_is_enforced() {
        let chain = ChainMdp::new(10);
        let err = plan_optimal(&chain, &chain.initial_state(), 4).unwrap_err();
        assert!(matches!(err, Error::StateBudgetExceeded { cap: 4 }));
    }

    #[test]
    fn lex_min_among_equal_lengths() {
        // on the chain re-rooted one step in, the expert is still advance*
        let chain = ChainMdp::new(5);
        let tr = plan_optimal(&chain, &chain.state(2), DEFAULT_STATE_CAP).unwrap();
        assert_eq!(tr.len(), 3);
        let all = brute_force_successes(&ChainMdp::new(3), 3);
        assert_eq!(all, vec![vec![ChainMdp::ADVANCE; 3]]);
    }
}
