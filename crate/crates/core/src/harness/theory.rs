use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::ReferenceKind;
use super::reference::{make_reference, MixturePolicy};
use crate::env::{episode_seed, ActionId, ChainMdp, Policy, StateKey, TaskMdp, TwoPathMdp, BanditMdp, DEFAULT_STATE_CAP};
use crate::error::{Error, Result};
use crate::evalprob::{dp_on_space, improvement_report_on_space, mc_success_prob, subtask_success_prob, StateSpace};
use crate::expert::{
    build_dataset, complete_expert_policy, plan_optimal, DatasetEntry, DatasetMode, ExpertPolicy, ExpertTrajectory,
    SingleTurnDataset,
};
use crate::grpo::{iterate_to_fixed_point, GrpoConfig, IterationReport, StateDist, TabularPolicy};
use crate::kitchen::{build_task, KitchenLayout, KitchenMdp, TaskKind};

pub const REPORT_SCHEMA: u32 = 1;
const AMPLIFY_MARGIN: f64 = 1e-9;
const IMPROVE_SLACK: f64 = 1e-12;
const SPOT_TOL: f64 = 1e-15;
const CI_MULTIPLIER: f64 = 4.0;
const SUBTASK_FRACTIONS: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    All,
    Amplify,
    Recursion,
    Improve,
    Subtask,
}

impl Suite {
    fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => Suite::All,
            "amplify" => Suite::Amplify,
            "recursion" => Suite::Recursion,
            "improve" => Suite::Improve,
            "subtask" => Suite::Subtask,
            _ => return Err(Error::Config(format!("unknown suite {s}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TheoryOptions {
    pub suite: Suite,
    pub seed: u64,
    pub amplify_instances: usize,
    pub mc_episodes: usize,
    pub epsilons: Vec<f64>,
    pub tasks: Vec<TaskKind>,
    pub grpo: GrpoConfig,
}

impl TheoryOptions {
    /// Hex sha256 of the options, recorded in the manifest.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(format!("{self:?}").as_bytes()))
    }
}

impl Default for TheoryOptions {
    fn default() -> Self {
        Self {
            suite: Suite::All,
            seed: 0,
            amplify_instances: 100,
            mc_episodes: 100_000,
            epsilons: vec![0.2, 0.5, 0.8],
            tasks: TaskKind::ALL.to_vec(),
            grpo: GrpoConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

/// One check. `margin` is positive exactly when the check holds with room
/// to spare.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub suite: String,
    pub name: String,
    pub status: CheckStatus,
    pub margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub details: serde_json::Value,
}

impl CheckResult {
    fn judged(suite: &str, name: String, ok: bool, margin: f64, details: serde_json::Value) -> Self {
        Self {
            suite: suite.into(),
            name,
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            margin: Some(margin),
            reason: None,
            details,
        }
    }

    fn skipped(suite: &str, name: String, reason: String) -> Self {
        Self {
            suite: suite.into(),
            name,
            status: CheckStatus::Skipped,
            margin: None,
            reason: Some(reason),
            details: serde_json::Value::Null,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoryReport {
    pub schema: u32,
    pub suite: Suite,
    pub passed: bool,
    pub checks_run: usize,
    pub failures: usize,
    pub skipped: usize,
    pub checks: Vec<CheckResult>,
}

impl TheoryReport {
    fn new(suite: Suite, checks: Vec<CheckResult>) -> Self {
        let failures = checks.iter().filter(|c| c.status == CheckStatus::Fail).count();
        let skipped = checks.iter().filter(|c| c.status == CheckStatus::Skipped).count();
        Self {
            schema: REPORT_SCHEMA,
            suite,
            passed: failures == 0,
            checks_run: checks.len() - skipped,
            failures,
            skipped,
            checks,
        }
    }

    pub fn suite_checks<'a>(&'a self, suite: &'a str) -> impl Iterator<Item = &'a CheckResult> + 'a {
        self.checks.iter().filter(move |c| c.suite == suite)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Runs the selected theorem suites.
pub fn verify_theory(opts: &TheoryOptions) -> Result<TheoryReport> {
    opts.grpo.validate()?;
    let mut amplify = Vec::new();
    let mut recursion = Vec::new();
    let mut improve = Vec::new();
    let mut subtask = Vec::new();
    let s = opts.suite;
    if s.includes(Suite::Amplify) {
        amplify = amplify_suite(opts)?;
    }
    if s.includes(Suite::Recursion) {
        recursion.push(chain_spot_check()?);
        recursion.extend(chain_recursion(opts)?);
        recursion.push(tied_fixture("recursion")?);
    }
    if s.includes(Suite::Improve) {
        improve.push(chain_improvement(&opts.grpo)?);
        improve.push(detector_self_test()?);
        improve.push(tied_fixture("improve")?);
    }
    let wants_kitchen = s.includes(Suite::Recursion) || s.includes(Suite::Improve);
    for &task in &opts.tasks {
        let needs_subtask = s.includes(Suite::Subtask) && task == TaskKind::DoubleCheeseBurger;
        if !wants_kitchen && !needs_subtask {
            continue;
        }
        let case = KitchenCase::canonical(task)?;
        if let Some(reason) = tie_reason(&case.traj) {
            if s.includes(Suite::Recursion) {
                recursion.push(CheckResult::skipped("recursion", task.name().into(), reason.clone()));
            }
            if s.includes(Suite::Improve) {
                improve.push(CheckResult::skipped("improve", task.name().into(), reason.clone()));
            }
            if needs_subtask {
                subtask.push(CheckResult::skipped("subtask", task.name().into(), reason));
            }
            continue;
        }
        if s.includes(Suite::Recursion) {
            recursion.extend(case.recursion_checks(opts)?);
        }
        if s.includes(Suite::Improve) || needs_subtask {
            let trained = case.fixed_point(&opts.grpo)?;
            if s.includes(Suite::Improve) {
                improve.push(case.improvement_check(&trained)?);
            }
            if needs_subtask {
                subtask.extend(case.subtask_checks(&trained)?);
            }
        }
    }
    if s.includes(Suite::Subtask) && !opts.tasks.contains(&TaskKind::DoubleCheeseBurger) {
        subtask.push(CheckResult::skipped(
            "subtask",
            TaskKind::DoubleCheeseBurger.name().into(),
            "task not selected".into(),
        ));
    }
    let checks = [amplify, recursion, improve, subtask].concat();
    Ok(TheoryReport::new(opts.suite, checks))
}

fn tie_reason(traj: &ExpertTrajectory) -> Option<String> {
    (!traj.uniqueness.is_unique()).then(|| format!("{:?}", traj.uniqueness))
}

fn tied_fixture(suite: &str) -> Result<CheckResult> {
    let mdp = TwoPathMdp;
    let traj = plan_optimal(&mdp, &mdp.initial_state(), DEFAULT_STATE_CAP)?;
    Ok(match tie_reason(&traj) {
        Some(reason) => CheckResult::skipped(suite, "two_path".into(), reason),
        None => CheckResult::judged(suite, "two_path".into(), false, -1.0, json!("fixture unexpectedly unique")),
    })
}

// --- amplification ----------------------------------------------------------

/// Random single-turn instance: per state an arm count, an expert arm and a
/// reference distribution with expert mass in `[0.05, 0.95]`.
fn random_instance(rng: &mut ChaCha8Rng) -> (TabularPolicy, SingleTurnDataset) {
    let n_states = rng.gen_range(1..=50usize);
    let arms: Vec<u16> = (0..n_states).map(|_| rng.gen_range(2..=8)).collect();
    let correct: Vec<u16> = arms.iter().map(|&n| rng.gen_range(0..n)).collect();
    let mdp = BanditMdp::new(arms.clone(), correct.clone());
    let mut pi = TabularPolicy::new();
    let mut entries = Vec::with_capacity(n_states);
    for i in 0..n_states {
        let n = arms[i] as usize;
        let q = rng.gen_range(0.05..=0.95);
        let rest: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(0.05..1.0)).collect();
        let z: f64 = rest.iter().sum();
        let mut others = rest.iter().map(|r| (1.0 - q) * r / z);
        let probs = (0..n)
            .map(|a| if a == correct[i] as usize { q } else { others.next().unwrap() })
            .collect();
        let actions: Vec<ActionId> = (0..arms[i]).map(ActionId).collect();
        pi.insert(mdp.state(i), StateDist { actions: actions.clone(), probs });
        entries.push(DatasetEntry {
            state_key: mdp.state(i),
            expert_action: mdp.correct(i),
            valid_actions: actions,
            weight: 0.0,
        });
    }
    (pi, SingleTurnDataset::uniform(entries).expect("at least one state"))
}

fn amplify_suite(opts: &TheoryOptions) -> Result<Vec<CheckResult>> {
    const BETAS: [f64; 4] = [0.1, 0.5, 1.0, 5.0];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    (0..opts.amplify_instances)
        .map(|i| {
            let (pi_ref, ds) = random_instance(&mut rng);
            let cfg = GrpoConfig {
                beta: BETAS[i % BETAS.len()],
                ..opts.grpo.clone()
            };
            let (_, report) = iterate_to_fixed_point(&pi_ref, &ds, &cfg)?;
            let gain = report.p_star - report.p_ref;
            Ok(CheckResult::judged(
                "amplify",
                format!("instance_{i:03}"),
                report.fixed_point_reached && gain > AMPLIFY_MARGIN,
                gain - AMPLIFY_MARGIN,
                json!({
                    "states": ds.len(),
                    "beta": cfg.beta,
                    "p_ref": report.p_ref,
                    "p_star": report.p_star,
                    "iterations": report.iterations(),
                    "fixed_point_reached": report.fixed_point_reached,
                }),
            ))
        })
        .collect()
}

// --- recursion --------------------------------------------------------------

/// Advances with probability `p` on every chain link.
fn chain_per_step(mdp: &ChainMdp, p: f64) -> TabularPolicy {
    let mut pi = TabularPolicy::new();
    for i in 0..mdp.len() {
        pi.insert(
            mdp.state(i),
            StateDist {
                actions: vec![ChainMdp::ADVANCE, ChainMdp::NOOP],
                probs: vec![p, 1.0 - p],
            },
        );
        pi.insert(mdp.stuck(i), StateDist::uniform(vec![ChainMdp::NOOP]));
    }
    pi.insert(mdp.state(mdp.len()), StateDist::uniform(vec![ChainMdp::NOOP]));
    pi
}

fn chain_fixture() -> Result<(ChainMdp, ExpertTrajectory, ExpertPolicy, StateSpace)> {
    let mdp = ChainMdp::new(3);
    let s0 = mdp.initial_state();
    let traj = plan_optimal(&mdp, &s0, DEFAULT_STATE_CAP)?;
    let expert = complete_expert_policy(&mdp, &traj, &[], DEFAULT_STATE_CAP)?;
    let space = StateSpace::build(&mdp, &[s0], DEFAULT_STATE_CAP)?;
    Ok((mdp, traj, expert, space))
}

fn chain_spot_check() -> Result<CheckResult> {
    let (mdp, _, expert, space) = chain_fixture()?;
    let table = dp_on_space(&space, &mdp, &chain_per_step(&mdp, 0.8), &expert, "per_step_0.8")?;
    let p = table.get(&mdp.initial_state()).expect("s0 in space");
    let err = (p - 0.512).abs();
    Ok(CheckResult::judged(
        "recursion",
        "chain_spot_value".into(),
        err <= SPOT_TOL,
        SPOT_TOL - err,
        json!({ "dp": p, "expected": 0.512 }),
    ))
}

fn dp_vs_mc(
    name: String,
    mdp: &dyn TaskMdp,
    space: &StateSpace,
    expert: &ExpertPolicy,
    policy: &dyn Policy,
    episodes: usize,
    seed: u64,
) -> Result<CheckResult> {
    let s0 = mdp.initial_state();
    let dp = dp_on_space(space, mdp, policy, expert, &name)?
        .get(&s0)
        .expect("s0 in space");
    let mc = mc_success_prob(mdp, policy, &s0, episodes, seed)?;
    let gap = (dp - mc.estimate).abs();
    let bound = CI_MULTIPLIER * (mc.estimate * (1.0 - mc.estimate) / episodes as f64).sqrt();
    Ok(CheckResult::judged(
        "recursion",
        name,
        gap <= bound,
        bound - gap,
        json!({
            "dp": dp,
            "mc": mc.estimate,
            "episodes": episodes,
            "ci_halfwidth": bound,
            "expected_successes": dp * episodes as f64,
        }),
    ))
}

fn chain_recursion(opts: &TheoryOptions) -> Result<Vec<CheckResult>> {
    let (mdp, _, expert, space) = chain_fixture()?;
    opts.epsilons
        .iter()
        .enumerate()
        .map(|(i, &epsilon)| {
            let pi = MixturePolicy {
                expert: &expert,
                kind: ReferenceKind::EpsilonMixture { epsilon },
            };
            dp_vs_mc(
                format!("chain/eps={epsilon}"),
                &mdp,
                &space,
                &expert,
                &pi,
                opts.mc_episodes,
                episode_seed(opts.seed, i as u64),
            )
        })
        .collect()
}

// --- improvement ------------------------------------------------------------

fn chain_improvement(grpo: &GrpoConfig) -> Result<CheckResult> {
    let (mdp, traj, expert, space) = chain_fixture()?;
    let live = space.live_states();
    let kind = ReferenceKind::EpsilonMixture { epsilon: 0.5 };
    let pi_ref = make_reference(&mdp, &expert, kind, &live)?;
    let ds = build_dataset(&mdp, &expert, &traj, &live, DatasetMode::AllStates)?;
    let (pi_star, iters) = iterate_to_fixed_point(&pi_ref, &ds, grpo)?;
    let report = improvement_report_on_space(&space, &mdp, &pi_star, &pi_ref, &expert)?;
    Ok(improvement_result("chain".into(), &report, &iters, &mdp.initial_state()))
}

fn improvement_result(
    name: String,
    report: &crate::evalprob::ImprovementReport,
    iters: &IterationReport,
    s0: &StateKey,
) -> CheckResult {
    let at = |s: &StateKey| report.pairs.iter().find(|p| &p.state_key == s);
    let root = at(s0);
    CheckResult::judged(
        "improve",
        name,
        report.violations_thm3.is_empty() && iters.fixed_point_reached,
        report.summary.min_margin_thm3 + IMPROVE_SLACK,
        json!({
            "live_states": report.summary.live_states,
            "states": report.summary.states,
            "violations": report.violations_thm3.len(),
            "single_turn_violations": report.violations_assumption1.len(),
            "strict_improvements": report.summary.strict_improvements,
            "p_ref_s0": root.map(|p| p.p_ref),
            "p_star_s0": root.map(|p| p.p_star),
            "grpo_iterations": iters.iterations(),
            "fixed_point_reached": iters.fixed_point_reached,
        }),
    )
}

/// Lowers the expert probability at the chain's first state; the detector
/// must flag exactly that state.
fn detector_self_test() -> Result<CheckResult> {
    let (mdp, _, expert, space) = chain_fixture()?;
    let reference = chain_per_step(&mdp, 0.8);
    let mut adversary = reference.clone();
    let s0 = mdp.initial_state();
    adversary.insert(
        s0.clone(),
        StateDist {
            actions: vec![ChainMdp::ADVANCE, ChainMdp::NOOP],
            probs: vec![0.5, 0.5],
        },
    );
    let report = improvement_report_on_space(&space, &mdp, &adversary, &reference, &expert)?;
    let flagged: Vec<&StateKey> = report.violations_thm3.iter().map(|p| &p.state_key).collect();
    Ok(CheckResult::judged(
        "improve",
        "detector_self_test".into(),
        flagged == [&s0],
        if flagged == [&s0] { 0.0 } else { -1.0 },
        json!({ "flagged": flagged.len() }),
    ))
}

// --- kitchen cases ----------------------------------------------------------

struct KitchenCase {
    task: TaskKind,
    mdp: KitchenMdp,
    traj: ExpertTrajectory,
    expert: ExpertPolicy,
    space: StateSpace,
}

struct Trained {
    pi_ref: TabularPolicy,
    pi_star: TabularPolicy,
    report: IterationReport,
}

impl KitchenCase {
    fn canonical(task: TaskKind) -> Result<Self> {
        let mdp = build_task(task, &KitchenLayout::canonical(task))?;
        let s0 = mdp.initial_state();
        let traj = plan_optimal(&mdp, &s0, DEFAULT_STATE_CAP)?;
        let expert = complete_expert_policy(&mdp, &traj, &[], DEFAULT_STATE_CAP)?;
        let space = StateSpace::build(&mdp, &[s0], DEFAULT_STATE_CAP)?;
        Ok(Self {
            task,
            mdp,
            traj,
            expert,
            space,
        })
    }

    fn recursion_checks(&self, opts: &TheoryOptions) -> Result<Vec<CheckResult>> {
        opts.epsilons
            .iter()
            .enumerate()
            .map(|(i, &epsilon)| {
                let pi = MixturePolicy {
                    expert: &self.expert,
                    kind: ReferenceKind::EpsilonMixture { epsilon },
                };
                let stream = (1 + self.task.code() as u64) * 16 + i as u64;
                dp_vs_mc(
                    format!("{}/eps={epsilon}", self.task.name()),
                    &self.mdp,
                    &self.space,
                    &self.expert,
                    &pi,
                    opts.mc_episodes,
                    episode_seed(opts.seed, stream),
                )
            })
            .collect()
    }

    /// Exact GRPO from the `eps = 0.5` mixture on every live state.
    fn fixed_point(&self, grpo: &GrpoConfig) -> Result<Trained> {
        let live = self.space.live_states();
        let kind = ReferenceKind::EpsilonMixture { epsilon: 0.5 };
        let pi_ref = make_reference(&self.mdp, &self.expert, kind, &live)?;
        let ds = build_dataset(&self.mdp, &self.expert, &self.traj, &live, DatasetMode::AllStates)?;
        let (pi_star, report) = iterate_to_fixed_point(&pi_ref, &ds, grpo)?;
        Ok(Trained {
            pi_ref,
            pi_star,
            report,
        })
    }

    fn improvement_check(&self, t: &Trained) -> Result<CheckResult> {
        let report = improvement_report_on_space(&self.space, &self.mdp, &t.pi_star, &t.pi_ref, &self.expert)?;
        Ok(improvement_result(
            self.task.name().into(),
            &report,
            &t.report,
            &self.mdp.initial_state(),
        ))
    }

    /// Subtasks ending at expert pair `floor(q * T^GT)`, `T^GT` counting
    /// the expert's state-action pairs.
    fn subtask_checks(&self, t: &Trained) -> Result<Vec<CheckResult>> {
        let t_gt = self.traj.len();
        SUBTASK_FRACTIONS
            .iter()
            .map(|&q| {
                let k = (q * t_gt as f64).floor() as usize;
                let p_ref = subtask_success_prob(&self.mdp, &self.traj, k, &t.pi_ref)?;
                let p_star = subtask_success_prob(&self.mdp, &self.traj, k, &t.pi_star)?;
                let margin = p_star - p_ref;
                let ok = if p_ref < 1.0 { margin > 0.0 } else { margin >= 0.0 };
                Ok(CheckResult::judged(
                    "subtask",
                    format!("{}/k={k}", self.task.name()),
                    ok,
                    margin,
                    json!({ "fraction": q, "k_star": k, "t_gt": t_gt, "p_ref": p_ref, "p_star": p_star }),
                ))
            })
            .collect()
    }
}
