use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::policy::{softmax_rows, FeaturizedPolicy};
use super::GrpoConfig;
use crate::env::{sample_index, TaskMdp};
use crate::error::{Error, Result};
use crate::expert::SingleTurnDataset;

/// Precomputed features of every dataset entry.
#[derive(Clone, Debug)]
pub struct FeatureTable {
    /// Per entry: one feature row per valid action.
    pub rows: Vec<Vec<Vec<f64>>>,
    pub expert: Vec<usize>,
    pub weights: Vec<f64>,
}

impl FeatureTable {
    pub fn build(mdp: &dyn TaskMdp, dataset: &SingleTurnDataset) -> Result<Self> {
        let rows = dataset
            .entries
            .par_iter()
            .map(|e| {
                e.valid_actions
                    .iter()
                    .map(|&a| mdp.featurize(&e.state_key, a).map(|f| f.values))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            rows,
            expert: dataset.entries.iter().map(|e| e.expert_index()).collect(),
            weights: dataset.entries.iter().map(|e| e.weight).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// G sampled actions for one state with their normalized advantages.
#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub entry: usize,
    pub actions: Vec<usize>,
    /// Sampling-policy probability of each drawn action.
    pub old_probs: Vec<f64>,
    pub advantages: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampledBatch {
    pub groups: Vec<Group>,
    pub degenerate: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub groups: usize,
    pub degenerate_groups: usize,
    pub surrogate: f64,
}

/// Draws `batch_size` states from the query distribution and `G` actions
/// for each from `policy`. Groups whose rewards are all equal are counted
/// and dropped.
pub fn sample_batch(
    policy: &FeaturizedPolicy,
    table: &FeatureTable,
    cfg: &GrpoConfig,
    step: u64,
) -> SampledBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(step);
    let mut batch = SampledBatch::default();
    for _ in 0..cfg.batch_size {
        let entry = sample_index(&table.weights, &mut rng);
        let probs = policy.probs_from_features(&table.rows[entry]);
        let actions: Vec<usize> = (0..cfg.group_size)
            .map(|_| sample_index(&probs, &mut rng))
            .collect();
        let rewards: Vec<f64> = actions
            .iter()
            .map(|&a| f64::from(u8::from(a == table.expert[entry])))
            .collect();
        let g = rewards.len() as f64;
        let mean = rewards.iter().sum::<f64>() / g;
        let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g;
        if var == 0.0 {
            batch.degenerate += 1;
            continue;
        }
        let std = var.sqrt().max(cfg.variance_floor);
        batch.groups.push(Group {
            entry,
            old_probs: actions.iter().map(|&a| probs[a]).collect(),
            advantages: rewards.iter().map(|r| (r - mean) / std).collect(),
            actions,
        });
    }
    batch
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

/// `mean_g [ (1/G) sum_i pi_w(a_i)/pi_old(a_i) * A_i - beta * KL(pi_w || pi_ref) ]`.
pub fn surrogate(
    weights: &[f64],
    temperature: f64,
    pi_ref: &FeaturizedPolicy,
    table: &FeatureTable,
    batch: &SampledBatch,
    beta: f64,
) -> f64 {
    if batch.groups.is_empty() {
        return 0.0;
    }
    let total: f64 = batch
        .groups
        .iter()
        .map(|g| {
            let rows = &table.rows[g.entry];
            let pi = softmax_rows(weights, temperature, rows);
            let q = pi_ref.probs_from_features(rows);
            let n = g.actions.len() as f64;
            let adv: f64 = g
                .actions
                .iter()
                .zip(&g.old_probs)
                .zip(&g.advantages)
                .map(|((&a, &old), &adv)| pi[a] / old * adv)
                .sum::<f64>()
                / n;
            adv - beta * kl(&pi, &q)
        })
        .sum();
    total / batch.groups.len() as f64
}

/// Analytic gradient of [`surrogate`] with respect to the weights.
pub fn surrogate_grad(
    weights: &[f64],
    temperature: f64,
    pi_ref: &FeaturizedPolicy,
    table: &FeatureTable,
    batch: &SampledBatch,
    beta: f64,
) -> Vec<f64> {
    let dim = weights.len();
    let mut grad = vec![0.0; dim];
    if batch.groups.is_empty() {
        return grad;
    }
    for g in &batch.groups {
        let rows = &table.rows[g.entry];
        let pi = softmax_rows(weights, temperature, rows);
        let q = pi_ref.probs_from_features(rows);
        let mut mean_phi = vec![0.0; dim];
        for (p, phi) in pi.iter().zip(rows) {
            for (m, x) in mean_phi.iter_mut().zip(phi) {
                *m += p * x;
            }
        }
        // coefficient c_a on pi(a) (phi_a - mean_phi) / T
        let n = g.actions.len() as f64;
        let mut coef = vec![0.0; rows.len()];
        for ((&a, &old), &adv) in g.actions.iter().zip(&g.old_probs).zip(&g.advantages) {
            coef[a] += adv / old / n;
        }
        for (a, c) in coef.iter_mut().enumerate() {
            if pi[a] > 0.0 {
                *c -= beta * (pi[a].ln() - q[a].ln());
            }
        }
        for (a, phi) in rows.iter().enumerate() {
            let scale = coef[a] * pi[a] / temperature;
            if scale == 0.0 {
                continue;
            }
            for ((gr, x), m) in grad.iter_mut().zip(phi).zip(&mean_phi) {
                *gr += scale * (x - m);
            }
        }
    }
    let k = batch.groups.len() as f64;
    grad.iter_mut().for_each(|g| *g /= k);
    grad
}

/// One sampled GRPO step on precomputed features. `step` selects the
/// random stream, so a run is reproducible from `cfg.seed`.
pub fn sampled_update_on(
    policy: &FeaturizedPolicy,
    pi_ref: &FeaturizedPolicy,
    table: &FeatureTable,
    cfg: &GrpoConfig,
    step: u64,
) -> Result<(FeaturizedPolicy, UpdateStats)> {
    cfg.validate()?;
    if table.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if pi_ref.dim() != policy.dim() || table.rows[0][0].len() != policy.dim() {
        return Err(Error::Config("feature dimensions do not match".into()));
    }
    let batch = sample_batch(policy, table, cfg, step);
    let mut next = policy.clone();
    let stats = UpdateStats {
        groups: batch.groups.len(),
        degenerate_groups: batch.degenerate,
        surrogate: surrogate(&policy.weights, policy.temperature, pi_ref, table, &batch, cfg.beta),
    };
    if batch.groups.is_empty() {
        return Ok((next, stats));
    }
    let grad = surrogate_grad(&policy.weights, policy.temperature, pi_ref, table, &batch, cfg.beta);
    for (w, g) in next.weights.iter_mut().zip(grad) {
        *w += cfg.learning_rate * g;
    }
    Ok((next, stats))
}

/// [`sampled_update_on`] with features computed from `mdp`.
pub fn sampled_update(
    policy: &FeaturizedPolicy,
    pi_ref: &FeaturizedPolicy,
    mdp: &dyn TaskMdp,
    dataset: &SingleTurnDataset,
    cfg: &GrpoConfig,
    step: u64,
) -> Result<(FeaturizedPolicy, UpdateStats)> {
    let table = FeatureTable::build(mdp, dataset)?;
    sampled_update_on(policy, pi_ref, &table, cfg, step)
}
