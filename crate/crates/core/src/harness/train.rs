use std::collections::HashSet;

use super::artifacts::{Manifest, OutputDir};
use super::config::{ExperimentConfig, TrainMode};
use super::reference::make_reference;
use crate::env::{write_trajectory_jsonl, StateKey, TaskMdp, DEFAULT_STATE_CAP};
use crate::error::Result;
use crate::expert::{
    build_dataset, complete_expert_policy, plan_optimal, DatasetMode, ExpertPolicy, ExpertTrajectory,
    SingleTurnDataset,
};
use crate::grpo::{
    iterate_to_fixed_point, sampled_update_on, FeatureTable, FeaturizedPolicy, IterationReport, TabularPolicy,
};
use crate::kitchen::{build_task, sample_layout, KitchenLayout, KitchenMdp, TaskKind, FEATURE_DIM, SCHEMA_VERSION};

/// Everything a training run produced.
pub struct TrainingRun {
    pub manifest: Manifest,
    pub expert: ExpertTrajectory,
    pub tabular: Option<(TabularPolicy, TabularPolicy, IterationReport)>,
    pub featurized: Option<FeaturizedTraining>,
}

pub struct FeaturizedTraining {
    pub policy: FeaturizedPolicy,
    pub curve: Vec<CurveRow>,
    pub dataset_len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow {
    pub step: usize,
    pub groups: usize,
    pub degenerate_groups: usize,
    pub surrogate: f64,
}

fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("step,groups,degenerate_groups,surrogate\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.17e}\n",
            r.step, r.groups, r.degenerate_groups, r.surrogate
        ));
    }
    out
}

/// The layout a config trains on.
pub fn training_layout(cfg: &ExperimentConfig) -> Result<KitchenLayout> {
    match &cfg.layout {
        Some(p) => KitchenLayout::load(p),
        None => Ok(KitchenLayout::canonical(cfg.task)),
    }
}

/// States one non-completing action off the expert path, in path order.
fn deviations(mdp: &dyn TaskMdp, traj: &ExpertTrajectory, limit: usize) -> Vec<StateKey> {
    let on_path: HashSet<&StateKey> = traj.states().collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (s, a) in &traj.steps.steps {
        for t in mdp.expand(s) {
            if out.len() == limit {
                return out;
            }
            if t.action != *a && !t.completes && !on_path.contains(&t.next) && seen.insert(t.next.clone()) {
                out.push(t.next);
            }
        }
    }
    out
}

/// Mixed-layout dataset for featurized training: expert trajectories and
/// one-step deviations on the training layout and on sampled layouts.
pub fn featurized_dataset(task: TaskKind, cfg: &ExperimentConfig) -> Result<(KitchenMdp, SingleTurnDataset)> {
    let f = &cfg.featurized;
    let mut layouts = vec![if task == cfg.task {
        training_layout(cfg)?
    } else {
        KitchenLayout::canonical(task)
    }];
    layouts.extend((0..f.train_layouts as u64).map(|i| sample_layout(task, f.train_layout_seed + i)));
    let mut entries = Vec::new();
    let mut first = None;
    for layout in &layouts {
        let mdp = build_task(task, layout)?;
        let traj = plan_optimal(&mdp, &mdp.initial_state(), DEFAULT_STATE_CAP)?;
        let extra = deviations(&mdp, &traj, f.extra_states);
        let expert = if extra.is_empty() {
            ExpertPolicy::from_trajectory(&traj)
        } else {
            complete_expert_policy(&mdp, &traj, &extra, DEFAULT_STATE_CAP)?
        };
        let ds = build_dataset(&mdp, &expert, &traj, &extra, DatasetMode::AllStates)?;
        entries.extend(ds.entries);
        first.get_or_insert(mdp);
    }
    Ok((first.expect("at least one layout"), SingleTurnDataset::uniform(entries)?))
}

/// Sampled GRPO from the uniform linear-softmax policy, which is also the
/// reference.
pub fn train_featurized(task: TaskKind, cfg: &ExperimentConfig) -> Result<FeaturizedTraining> {
    let (mdp, dataset) = featurized_dataset(task, cfg)?;
    let table = FeatureTable::build(&mdp, &dataset)?;
    let pi_ref = FeaturizedPolicy::zeros(FEATURE_DIM, SCHEMA_VERSION, cfg.featurized.temperature);
    let mut policy = pi_ref.clone();
    let mut curve = Vec::with_capacity(cfg.featurized.steps);
    for step in 0..cfg.featurized.steps {
        let (next, stats) = sampled_update_on(&policy, &pi_ref, &table, &cfg.grpo, step as u64)?;
        policy = next;
        curve.push(CurveRow {
            step,
            groups: stats.groups,
            degenerate_groups: stats.degenerate_groups,
            surrogate: stats.surrogate,
        });
    }
    Ok(FeaturizedTraining {
        policy,
        curve,
        dataset_len: dataset.len(),
    })
}

/// Builds the task, plans and certifies the expert, trains the configured
/// policies and writes every artifact plus `manifest.json` into
/// `cfg.output_dir`. On failure a manifest naming the failed stage is
/// still written.
pub fn run_training(cfg: &ExperimentConfig) -> Result<TrainingRun> {
    cfg.validate()?;
    let mut out = OutputDir::open(&cfg.output_dir)?;
    let hash = cfg.hash();
    let mut stage = "config";
    match train_stages(cfg, &mut out, &mut stage) {
        Ok((expert, tabular, featurized)) => {
            let manifest = out.finish("train", &hash, None)?;
            Ok(TrainingRun {
                manifest,
                expert,
                tabular,
                featurized,
            })
        }
        Err(e) => {
            out.finish("train", &hash, Some((stage, &e)))?;
            Err(e)
        }
    }
}

type Stages = (
    ExpertTrajectory,
    Option<(TabularPolicy, TabularPolicy, IterationReport)>,
    Option<FeaturizedTraining>,
);

fn train_stages(cfg: &ExperimentConfig, out: &mut OutputDir, stage: &mut &'static str) -> Result<Stages> {
    out.write("config.toml", cfg.to_toml().as_bytes())?;

    *stage = "build_task";
    let mdp = build_task(cfg.task, &training_layout(cfg)?)?;

    *stage = "plan";
    let traj = plan_optimal(&mdp, &mdp.initial_state(), DEFAULT_STATE_CAP)?;
    let mut buf = Vec::new();
    write_trajectory_jsonl(&mdp, &traj.steps, &mut buf)?;
    out.write("expert.traj.jsonl", &buf)?;
    out.write("expert.json", expert_summary(&mdp, &traj)?.as_bytes())?;

    let mut tabular = None;
    if matches!(cfg.mode, TrainMode::Tabular | TrainMode::Both) {
        *stage = "dataset";
        let expert = ExpertPolicy::from_trajectory(&traj);
        let dataset = build_dataset(&mdp, &expert, &traj, &[], DatasetMode::TrajectoryOnly)?;
        let mut buf = Vec::new();
        dataset.write_jsonl(&mut buf)?;
        out.write("dataset.jsonl", &buf)?;

        *stage = "reference";
        let states: Vec<StateKey> = dataset.states().cloned().collect();
        let pi_ref = make_reference(&mdp, &expert, cfg.reference, &states)?;
        out.write("policy_ref.json", pi_ref.to_json().as_bytes())?;

        *stage = "tabular";
        let (pi_star, report) = iterate_to_fixed_point(&pi_ref, &dataset, &cfg.grpo)?;
        out.write("policy_tabular.json", pi_star.to_json().as_bytes())?;
        let mut csv = Vec::new();
        report.write_csv(&mut csv)?;
        out.write("iterations.csv", &csv)?;
        out.write(
            "amplification.json",
            format!(
                "{{\"p_ref\":{},\"p_star\":{},\"fixed_point_reached\":{},\"iterations\":{}}}\n",
                report.p_ref,
                report.p_star,
                report.fixed_point_reached,
                report.iterations()
            )
            .as_bytes(),
        )?;
        tabular = Some((pi_ref, pi_star, report));
    }

    let mut featurized = None;
    if matches!(cfg.mode, TrainMode::Featurized | TrainMode::Both) {
        *stage = "featurized";
        let run = train_featurized(cfg.task, cfg)?;
        out.write("policy_featurized.json", run.policy.to_json().as_bytes())?;
        out.write("featurized_curve.csv", curve_csv(&run.curve).as_bytes())?;
        featurized = Some(run);
    }
    *stage = "write";
    Ok((traj, tabular, featurized))
}

fn expert_summary(mdp: &KitchenMdp, traj: &ExpertTrajectory) -> Result<String> {
    let actions: Vec<String> = traj.steps.steps.iter().map(|(_, a)| mdp.action_name(*a)).collect();
    let v = serde_json::json!({
        "task": mdp.task().name(),
        "length": traj.len(),
        "uniqueness": traj.uniqueness,
        "tie_break_rule": traj.tie_break_rule,
        "actions": actions,
    });
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}
