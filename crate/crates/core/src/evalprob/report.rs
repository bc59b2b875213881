use serde::{Deserialize, Serialize};

use super::{dp_on_space, StateSpace};
use crate::env::{Policy, StateKey, TaskMdp};
use crate::error::Result;
use crate::expert::ExpertPolicy;

const SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatePair {
    pub state_key: StateKey,
    pub t_star: usize,
    pub p_star: f64,
    pub p_ref: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImprovementSummary {
    pub states: usize,
    pub live_states: usize,
    pub min_margin_thm3: f64,
    pub min_margin_assumption1: f64,
    pub strict_improvements: usize,
}

/// Per-state comparison of two policies. Violations are data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImprovementReport {
    pub violations_thm3: Vec<StatePair>,
    pub violations_assumption1: Vec<StatePair>,
    pub summary: ImprovementSummary,
    #[serde(skip)]
    pub pairs: Vec<StatePair>,
}

impl ImprovementReport {
    pub fn passed(&self) -> bool {
        self.violations_thm3.is_empty() && self.violations_assumption1.is_empty()
    }
}

/// Compares `P^{pi*}` with `P^{pi_ref}` on every live state reachable from
/// `states`, together with the single-turn expected rewards
/// `pi(a*|s)` of both policies.
pub fn improvement_report(
    mdp: &dyn TaskMdp,
    pi_star: &dyn Policy,
    pi_ref: &dyn Policy,
    expert: &ExpertPolicy,
    states: &[StateKey],
    cap: usize,
) -> Result<ImprovementReport> {
    let space = StateSpace::build(mdp, states, cap)?;
    improvement_report_on_space(&space, mdp, pi_star, pi_ref, expert)
}

pub fn improvement_report_on_space(
    space: &StateSpace,
    mdp: &dyn TaskMdp,
    pi_star: &dyn Policy,
    pi_ref: &dyn Policy,
    expert: &ExpertPolicy,
) -> Result<ImprovementReport> {
    let star = dp_on_space(space, mdp, pi_star, expert, "pi_star")?;
    let reference = dp_on_space(space, mdp, pi_ref, expert, "pi_ref")?;
    let mut pairs = Vec::new();
    let mut violations_thm3 = Vec::new();
    let mut violations_assumption1 = Vec::new();
    let mut min_thm3 = f64::INFINITY;
    let mut min_a1 = f64::INFINITY;
    let mut strict = 0;
    for (i, (rs, rr)) in star.rows().iter().zip(reference.rows()).enumerate() {
        let Some(t_star) = space.t_star_at(i) else {
            continue;
        };
        let s = &rs.state_key;
        let pair = StatePair {
            state_key: s.clone(),
            t_star,
            p_star: rs.p_value,
            p_ref: rr.p_value,
        };
        let margin = rs.p_value - rr.p_value;
        min_thm3 = min_thm3.min(margin);
        if margin > SLACK {
            strict += 1;
        }
        if margin < -SLACK {
            violations_thm3.push(pair.clone());
        }
        let a = expert.rewarded_action(s)?.expect("live state has an expert action");
        let r_star = pi_star.prob(mdp, s, a)?;
        let r_ref = pi_ref.prob(mdp, s, a)?;
        min_a1 = min_a1.min(r_star - r_ref);
        if r_star < r_ref - SLACK {
            violations_assumption1.push(pair.clone());
        }
        pairs.push(pair);
    }
    violations_thm3.sort_by(|a, b| a.state_key.cmp(&b.state_key));
    violations_assumption1.sort_by(|a, b| a.state_key.cmp(&b.state_key));
    pairs.sort_by(|a, b| a.state_key.cmp(&b.state_key));
    Ok(ImprovementReport {
        violations_thm3,
        violations_assumption1,
        summary: ImprovementSummary {
            states: space.len(),
            live_states: pairs.len(),
            min_margin_thm3: if pairs.is_empty() { 0.0 } else { min_thm3 },
            min_margin_assumption1: if pairs.is_empty() { 0.0 } else { min_a1 },
            strict_improvements: strict,
        },
        pairs,
    })
}
