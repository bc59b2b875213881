//! GRPO on the single-turn problem.
//!
//! The exact update maximizes `E_pi[A] - beta * KL(pi || pi_ref)` state by
//! state with `A = (r - p) / sqrt(p (1 - p))`, `p` the old policy's success
//! probability in that state. The maximizer is the exponential tilt
//! `pi_ref * exp(A / beta)`. The sampled update is a gradient step on the
//! same objective with group-normalized advantages and an importance ratio.

mod policy;
mod sampled;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Policy, TaskMdp};
use crate::error::{Error, Result};
use crate::expert::SingleTurnDataset;

pub use policy::{FeaturizedPolicy, StateDist, TabularPolicy, POLICY_SCHEMA};
pub use sampled::{
    sample_batch, sampled_update, sampled_update_on, surrogate, surrogate_grad, FeatureTable, Group,
    SampledBatch, UpdateStats,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub beta: f64,
    pub group_size: usize,
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub fixed_point_tol: f64,
    pub variance_floor: f64,
    pub seed: u64,
    /// States drawn from the query distribution per sampled update.
    pub batch_size: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            group_size: 8,
            learning_rate: 0.1,
            max_iterations: 10_000,
            fixed_point_tol: 1e-10,
            variance_floor: 1e-8,
            seed: 0,
            batch_size: 32,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.beta > 0.0) {
            return bad("beta must be positive");
        }
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.fixed_point_tol > 0.0) {
            return bad("fixed_point_tol must be positive");
        }
        if !(self.variance_floor >= 0.0) {
            return bad("variance_floor must be nonnegative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Advantage {
    pub value: f64,
    pub degenerate: bool,
}

/// `(r - p) / sqrt(p (1 - p))`; zero and flagged when `p` is 0 or 1.
pub fn advantage_binary(r: u8, p: f64) -> Advantage {
    if p <= 0.0 || p >= 1.0 {
        return Advantage {
            value: 0.0,
            degenerate: true,
        };
    }
    Advantage {
        value: (f64::from(r) - p) / (p * (1.0 - p)).sqrt(),
        degenerate: false,
    }
}

fn tilt(old: &StateDist, reference: &StateDist, expert: usize, beta: f64) -> StateDist {
    let p = old.probs[expert];
    let logits: Vec<f64> = (0..old.actions.len())
        .map(|i| {
            let a = advantage_binary(u8::from(i == expert), p).value;
            reference.probs[i].ln() + a / beta
        })
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    StateDist {
        actions: old.actions.clone(),
        probs: e.into_iter().map(|x| x / z).collect(),
    }
}

/// One exact GRPO step on the dataset states; other states are copied.
pub fn exact_update(
    pi_old: &TabularPolicy,
    pi_ref: &TabularPolicy,
    dataset: &SingleTurnDataset,
    beta: f64,
) -> Result<TabularPolicy> {
    let updates = dataset
        .entries
        .par_iter()
        .map(|e| {
            let s = &e.state_key;
            let old = pi_old.dist(s)?;
            let reference = pi_ref.dist(s)?;
            if old.actions != e.valid_actions || reference.actions != e.valid_actions {
                return Err(Error::SupportMismatch(s.clone()));
            }
            let k = e.expert_index();
            let p = old.probs[k];
            if p <= 0.0 || p >= 1.0 {
                return Ok(None);
            }
            if old.probs.iter().any(|&x| x <= 0.0) {
                return Err(Error::RatioUndefined(s.clone()));
            }
            Ok(Some((s.clone(), tilt(old, reference, k, beta))))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut next = pi_old.clone();
    for (s, d) in updates.into_iter().flatten() {
        next.insert(s, d);
    }
    Ok(next)
}

/// `sum_s rho(s) pi(a*|s)`.
pub fn success_prob_single_turn(
    policy: &dyn Policy,
    mdp: &dyn TaskMdp,
    dataset: &SingleTurnDataset,
) -> Result<f64> {
    let mut total = 0.0;
    for e in &dataset.entries {
        let probs = policy.distribution(mdp, &e.state_key, &e.valid_actions)?;
        total += e.weight * probs[e.expert_index()];
    }
    Ok(total)
}

fn kl_state(p: &[f64], q: &[f64], s: &crate::env::StateKey) -> Result<f64> {
    let mut kl = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return Err(Error::SupportMismatch(s.clone()));
            }
            kl += a * (a / b).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// `sum_s rho(s) KL(pi(.|s) || pi_ref(.|s))`.
pub fn kl_to_ref(
    policy: &dyn Policy,
    pi_ref: &dyn Policy,
    mdp: &dyn TaskMdp,
    dataset: &SingleTurnDataset,
) -> Result<f64> {
    let mut total = 0.0;
    for e in &dataset.entries {
        let p = policy.distribution(mdp, &e.state_key, &e.valid_actions)?;
        let q = pi_ref.distribution(mdp, &e.state_key, &e.valid_actions)?;
        total += e.weight * kl_state(&p, &q, &e.state_key)?;
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iter: usize,
    pub p_n: f64,
    pub mean_kl: f64,
    pub max_tv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub rows: Vec<IterationRow>,
    pub fixed_point_reached: bool,
    pub p_ref: f64,
    pub p_star: f64,
}

impl IterationReport {
    pub fn iterations(&self) -> usize {
        self.rows.len()
    }

    /// CSV with header `iter,p_n,mean_kl,max_tv`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "iter,p_n,mean_kl,max_tv")?;
        for r in &self.rows {
            writeln!(out, "{},{:.17e},{:.17e},{:.17e}", r.iter, r.p_n, r.mean_kl, r.max_tv)?;
        }
        Ok(())
    }
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Iterates [`exact_update`] from `pi_ref` until the largest per-state
/// total-variation change drops below `cfg.fixed_point_tol`.
pub fn iterate_to_fixed_point(
    pi_ref: &TabularPolicy,
    dataset: &SingleTurnDataset,
    cfg: &GrpoConfig,
) -> Result<(TabularPolicy, IterationReport)> {
    cfg.validate()?;
    let p_of = |pi: &TabularPolicy| -> Result<f64> {
        let mut total = 0.0;
        for e in &dataset.entries {
            total += e.weight * pi.dist(&e.state_key)?.probs[e.expert_index()];
        }
        Ok(total)
    };
    let kl_of = |pi: &TabularPolicy| -> Result<f64> {
        let mut total = 0.0;
        for e in &dataset.entries {
            let s = &e.state_key;
            total += e.weight * kl_state(&pi.dist(s)?.probs, &pi_ref.dist(s)?.probs, s)?;
        }
        Ok(total)
    };
    let p_ref = p_of(pi_ref)?;
    let mut pi = pi_ref.clone();
    let mut rows = Vec::new();
    let mut reached = false;
    for n in 1..=cfg.max_iterations {
        let next = exact_update(&pi, pi_ref, dataset, cfg.beta)?;
        let max_tv = dataset
            .entries
            .iter()
            .map(|e| {
                let s = &e.state_key;
                tv(&pi.dist(s).unwrap().probs, &next.dist(s).unwrap().probs)
            })
            .fold(0.0, f64::max);
        pi = next;
        rows.push(IterationRow {
            iter: n,
            p_n: p_of(&pi)?,
            mean_kl: kl_of(&pi)?,
            max_tv,
        });
        if max_tv < cfg.fixed_point_tol {
            reached = true;
            break;
        }
    }
    let p_star = p_of(&pi)?;
    Ok((
        pi,
        IterationReport {
            rows,
            fixed_point_reached: reached,
            p_ref,
            p_star,
        },
    ))
}
