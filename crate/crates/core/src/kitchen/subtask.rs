use crate::env::{ActionId, FeatureVector, StateKey, TaskMdp, Transition};
use crate::error::{Error, Result};
use crate::expert::ExpertTrajectory;

/// The parent task with completion moved to one expert pair.
pub struct SubtaskMdp<'a> {
    parent: &'a dyn TaskMdp,
    target: (StateKey, ActionId),
    k_star: usize,
    horizon: usize,
}

impl SubtaskMdp<'_> {
    pub fn k_star(&self) -> usize {
        self.k_star
    }

    pub fn target(&self) -> &(StateKey, ActionId) {
        &self.target
    }
}

/// Subtask completed at the expert pair with index `k_star`. Requires
/// `k_star < expert.len()`, the number of expert pairs. The horizon keeps the
/// parent's slack over the expert: `k_star + (horizon - len)`.
pub fn make_subtask<'a>(
    parent: &'a dyn TaskMdp,
    expert: &ExpertTrajectory,
    k_star: usize,
) -> Result<SubtaskMdp<'a>> {
    let len = expert.len();
    if k_star >= len {
        return Err(Error::IndexOutOfRange {
            index: k_star,
            bound: len,
        });
    }
    let target = expert.steps.steps[k_star].clone();
    let horizon = k_star + parent.horizon().saturating_sub(len);
    Ok(SubtaskMdp {
        parent,
        target,
        k_star,
        horizon: horizon.max(k_star + 1),
    })
}

impl TaskMdp for SubtaskMdp<'_> {
    fn initial_state(&self) -> StateKey {
        self.parent.initial_state()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn valid_actions(&self, s: &StateKey) -> Vec<ActionId> {
        self.parent.valid_actions(s)
    }

    fn next_state(&self, s: &StateKey, a: ActionId) -> StateKey {
        self.parent.next_state(s, a)
    }

    fn completes(&self, s: &StateKey, a: ActionId) -> bool {
        a == self.target.1 && *s == self.target.0
    }

    fn action_name(&self, a: ActionId) -> String {
        self.parent.action_name(a)
    }

    fn expand(&self, s: &StateKey) -> Vec<Transition> {
        let here = *s == self.target.0;
        let mut out = self.parent.expand(s);
        for t in &mut out {
            t.completes = here && t.action == self.target.1;
        }
        out
    }

    fn featurize(&self, s: &StateKey, a: ActionId) -> Result<FeatureVector> {
        self.parent.featurize(s, a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{rollout, ChainMdp};
    use crate::expert::{plan_optimal, ExpertPolicy};
    use crate::kitchen::{build_task, KitchenLayout, TaskKind};
    use crate::env::DEFAULT_STATE_CAP;
    use crate::evalprob::min_turns;

    #[test]
    fn k_star_at_expert_length_is_rejected() {
        let chain = ChainMdp::new(3);
        let tr = plan_optimal(&chain, &chain.initial_state(), DEFAULT_STATE_CAP).unwrap();
        let err = make_subtask(&chain, &tr, tr.len()).err().unwrap();
        assert!(matches!(err, Error::IndexOutOfRange { index: 3, bound: 3 }));
        assert!(make_subtask(&chain, &tr, 2).is_ok());
    }

    #[test]
    fn truncated_expert_solves_every_subtask() {
        let mdp = build_task(TaskKind::Burger, &KitchenLayout::canonical(TaskKind::Burger)).unwrap();
        let tr = plan_optimal(&mdp, &mdp.initial_state(), DEFAULT_STATE_CAP).unwrap();
        for k in 0..tr.len() {
            let sub = make_subtask(&mdp, &tr, k).unwrap();
            let replay = ExpertPolicy::from_trajectory(&tr);
            let out = rollout(&sub, &replay, &sub.initial_state(), sub.horizon(), 0).unwrap();
            assert!(out.trajectory.success);
            assert_eq!(out.turns_used, k + 1);
            assert!(out.trajectory.is_consistent(&sub));
            assert_eq!(out.trajectory.steps[..], tr.steps.steps[..=k]);
        }
    }

    #[test]
    fn subtask_min_turns_is_k_star() {
        let kind = TaskKind::DoubleCheeseBurger;
        let mdp = build_task(kind, &KitchenLayout::canonical(kind)).unwrap();
        let tr = plan_optimal(&mdp, &mdp.initial_state(), DEFAULT_STATE_CAP).unwrap();
        // first placement of a cooked patty onto the plate
        let k = tr
            .steps
            .steps
            .iter()
            .position(|(s, a)| {
                let st = mdp.decode(s);
                mdp.action_name(*a) == "stack"
                    && st.held.is_some_and(|h| h.kind == crate::kitchen::ItemKind::Patty)
            })
            .unwrap();
        let sub = make_subtask(&mdp, &tr, k).unwrap();
        let s0 = sub.initial_state();
        let table = min_turns(&sub, std::slice::from_ref(&s0), DEFAULT_STATE_CAP).unwrap();
        assert_eq!(table.get(&s0), Some(Some(k)));
        assert_eq!(sub.horizon(), k + kind.timeout() - 23);
    }
}
