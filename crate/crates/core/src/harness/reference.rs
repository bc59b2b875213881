use super::config::ReferenceKind;
use crate::env::{ActionId, Policy, StateKey, TaskMdp};
use crate::error::{Error, Result};
use crate::expert::ExpertPolicy;
use crate::grpo::{StateDist, TabularPolicy};

/// `(1 - eps) * 1{a = expert(s)} + eps / |valid(s)|`, evaluated on demand.
#[derive(Clone, Copy, Debug)]
pub struct MixturePolicy<'a> {
    pub expert: &'a ExpertPolicy,
    pub kind: ReferenceKind,
}

impl MixturePolicy<'_> {
    fn epsilon(&self) -> f64 {
        match self.kind {
            ReferenceKind::EpsilonMixture { epsilon } => epsilon,
            ReferenceKind::Uniform => 1.0,
        }
    }
}

impl Policy for MixturePolicy<'_> {
    fn distribution(&self, _: &dyn TaskMdp, s: &StateKey, valid: &[ActionId]) -> Result<Vec<f64>> {
        let eps = self.epsilon();
        let n = valid.len() as f64;
        if eps == 1.0 {
            return Ok(vec![1.0 / n; valid.len()]);
        }
        let a = self
            .expert
            .action_of(s)
            .ok_or_else(|| Error::PolicyStateMissing(s.clone()))?;
        Ok(valid
            .iter()
            .map(|&b| if b == a { 1.0 - eps + eps / n } else { eps / n })
            .collect())
    }
}

/// Tabular reference policy on `states`.
pub fn make_reference(
    mdp: &dyn TaskMdp,
    expert: &ExpertPolicy,
    kind: ReferenceKind,
    states: &[StateKey],
) -> Result<TabularPolicy> {
    let mix = MixturePolicy { expert, kind };
    let mut pi = TabularPolicy::new();
    for s in states {
        let valid = mdp.valid_actions(s);
        let probs = mix.distribution(mdp, s, &valid)?;
        pi.insert(s.clone(), StateDist { actions: valid, probs });
    }
    Ok(pi)
}
