//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use planlab::env::{TaskMdp, DEFAULT_STATE_CAP};
use planlab::expert::{build_dataset, complete_expert_policy, plan_optimal, DatasetMode};
use planlab::grpo::{sample_batch, surrogate, surrogate_grad, FeatureTable, FeaturizedPolicy, GrpoConfig, SampledBatch};
use planlab::harness::{
    cross_task_matrix, evaluate, train_featurized, verify_theory, AnyPolicy, CheckStatus, ExperimentConfig,
    GeneralizationMatrix, Metrics, Suite, TheoryOptions, TheoryReport,
};
use planlab::kitchen::{build_task, KitchenLayout, TaskKind, FEATURE_DIM, SCHEMA_VERSION};

type Outcome = Result<String, String>;

#[derive(Default)]
struct Shared {
    matrix: Option<GeneralizationMatrix>,
}

fn main() {
    let mut shared = Shared::default();
    let criteria: Vec<(&str, fn(&mut Shared) -> Outcome)> = vec![
        ("success amplification", amplification),
        ("recursion consistency", recursion),
        ("multi-turn improvement", improvement),
        ("subtask generalization", subtask),
        ("surrogate gradient", gradient),
        ("cross-task pattern", cross_task),
        ("metric algebra", metric_algebra),
        ("CLI determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| check(&mut shared)))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_message(&p))));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name} [{secs:.1}s] {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name} [{secs:.1}s] {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let t = start.elapsed();
    if t > limit {
        Err(format!("{what} took {t:?}, limit {limit:?}"))
    } else {
        Ok(())
    }
}

fn theory(suite: Suite) -> Result<TheoryReport, String> {
    let opts = TheoryOptions {
        suite,
        ..TheoryOptions::default()
    };
    verify_theory(&opts).map_err(|e| e.to_string())
}

fn failures(report: &TheoryReport) -> Vec<String> {
    report
        .checks
        .iter()
        .filter(|c| c.status == CheckStatus::Fail)
        .map(|c| format!("{} (margin {:.3e}, {})", c.name, c.margin.unwrap_or(f64::NAN), c.details))
        .collect()
}

fn judged(report: &TheoryReport, suite: &str) -> usize {
    report
        .suite_checks(suite)
        .filter(|c| c.status != CheckStatus::Skipped)
        .count()
}

fn amplification(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    let r = theory(Suite::Amplify)?;
    within(start, Duration::from_secs(30), "amplification suite")?;
    let n = judged(&r, "amplify");
    if n < 100 {
        return Err(format!("only {n} instances"));
    }
    let betas: BTreeSet<String> = r
        .checks
        .iter()
        .map(|c| c.details["beta"].to_string())
        .collect();
    if betas.len() != 4 {
        return Err(format!("beta grid {betas:?}"));
    }
    let min = r.checks.iter().filter_map(|c| c.margin).fold(f64::INFINITY, f64::min);
    let bad = failures(&r);
    if bad.is_empty() {
        Ok(format!("{n} instances, min p*-p_ref-1e-9 = {min:.3e}"))
    } else {
        Err(format!("{} of {n} instances: {}", bad.len(), bad.join("; ")))
    }
}

fn recursion(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    let r = theory(Suite::Recursion)?;
    within(start, Duration::from_secs(300), "recursion suite")?;
    let spot = r
        .checks
        .iter()
        .find(|c| c.name == "chain_spot_value")
        .ok_or("spot check missing")?;
    if spot.status != CheckStatus::Pass {
        return Err(format!("chain spot value {}", spot.details));
    }
    let cases = judged(&r, "recursion") - 1;
    if cases != 15 {
        return Err(format!("expected 15 DP/MC cases, ran {cases}"));
    }
    let bad = failures(&r);
    if bad.is_empty() {
        Ok(format!("P(chain) = 0.512, {cases} DP/MC cases within 4 sigma"))
    } else {
        Err(format!("{} of {cases} cases: {}", bad.len(), bad.join("; ")))
    }
}

fn improvement(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    let r = theory(Suite::Improve)?;
    within(start, Duration::from_secs(600), "improvement suite")?;
    let tasks: Vec<_> = r
        .suite_checks("improve")
        .filter(|c| TaskKind::ALL.iter().any(|t| t.name() == c.name))
        .collect();
    if tasks.len() != 4 || tasks.iter().any(|c| c.status != CheckStatus::Pass) {
        return Err(failures(&r).join("; "));
    }
    let live: u64 = tasks.iter().map(|c| c.details["live_states"].as_u64().unwrap()).sum();
    let bad = failures(&r);
    if bad.is_empty() {
        Ok(format!("0 violations over {live} live states on 4 tasks"))
    } else {
        Err(bad.join("; "))
    }
}

fn subtask(_: &mut Shared) -> Outcome {
    let r = theory(Suite::Subtask)?;
    let checks: Vec<_> = r.suite_checks("subtask").collect();
    if checks.len() != 3 {
        return Err(format!("expected 3 cut points, got {}", checks.len()));
    }
    let ks: Vec<String> = checks.iter().map(|c| c.details["k_star"].to_string()).collect();
    let bad = failures(&r);
    if bad.is_empty() {
        Ok(format!("k* in {{{}}} all strictly improved", ks.join(", ")))
    } else {
        Err(bad.join("; "))
    }
}

// --- gradient ---------------------------------------------------------------

fn fd_relative_error(table: &FeatureTable, w: &[f64], pi_ref: &FeaturizedPolicy, batch: &SampledBatch, beta: f64) -> f64 {
    const H: f64 = 1e-5;
    let analytic = surrogate_grad(w, 1.0, pi_ref, table, batch, beta);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut x = w.to_vec();
    for i in 0..w.len() {
        x[i] = w[i] + H;
        let up = surrogate(&x, 1.0, pi_ref, table, batch, beta);
        x[i] = w[i] - H;
        let down = surrogate(&x, 1.0, pi_ref, table, batch, beta);
        x[i] = w[i];
        let fd = (up - down) / (2.0 * H);
        num += (analytic[i] - fd).powi(2);
        den += fd.powi(2);
    }
    num.sqrt() / den.sqrt().max(1e-12)
}

fn first_nonempty_batch(policy: &FeaturizedPolicy, table: &FeatureTable, cfg: &GrpoConfig) -> SampledBatch {
    (0..)
        .map(|step| sample_batch(policy, table, cfg, step))
        .find(|b| !b.groups.is_empty())
        .unwrap()
}

fn gradient(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    // synthetic dense features
    for seed in 0..16u64 {
        let dims = rng.gen_range(2..12);
        let states = rng.gen_range(1..6);
        let mut rows = Vec::new();
        let mut expert = Vec::new();
        for _ in 0..states {
            let n = rng.gen_range(2..7);
            rows.push((0..n).map(|_| (0..dims).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect::<Vec<Vec<f64>>>());
            expert.push(rng.gen_range(0..n));
        }
        let table = FeatureTable {
            rows,
            expert,
            weights: vec![1.0 / states as f64; states],
        };
        let mut policy = FeaturizedPolicy::zeros(dims, 0, 1.0);
        policy.weights = (0..dims).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut pi_ref = FeaturizedPolicy::zeros(dims, 0, 1.0);
        pi_ref.weights = (0..dims).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cfg = GrpoConfig {
            seed,
            batch_size: 16,
            ..GrpoConfig::default()
        };
        let batch = first_nonempty_batch(&policy, &table, &cfg);
        let beta = [0.1, 0.5, 1.0, 5.0][seed as usize % 4];
        worst = worst.max(fd_relative_error(&table, &policy.weights, &pi_ref, &batch, beta));
        count += 1;
    }
    // kitchen features
    for (i, task) in TaskKind::ALL.into_iter().enumerate() {
        let mdp = build_task(task, &KitchenLayout::canonical(task)).map_err(|e| e.to_string())?;
        let traj = plan_optimal(&mdp, &mdp.initial_state(), DEFAULT_STATE_CAP).map_err(|e| e.to_string())?;
        let expert = complete_expert_policy(&mdp, &traj, &[], DEFAULT_STATE_CAP).map_err(|e| e.to_string())?;
        let ds = build_dataset(&mdp, &expert, &traj, &[], DatasetMode::TrajectoryOnly).map_err(|e| e.to_string())?;
        let table = FeatureTable::build(&mdp, &ds).map_err(|e| e.to_string())?;
        for j in 0..2u64 {
            let mut policy = FeaturizedPolicy::zeros(FEATURE_DIM, SCHEMA_VERSION, 1.0);
            policy.weights = (0..FEATURE_DIM).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let pi_ref = FeaturizedPolicy::zeros(FEATURE_DIM, SCHEMA_VERSION, 1.0);
            let cfg = GrpoConfig {
                seed: 100 + 2 * i as u64 + j,
                ..GrpoConfig::default()
            };
            let batch = first_nonempty_batch(&policy, &table, &cfg);
            worst = worst.max(fd_relative_error(&table, &policy.weights, &pi_ref, &batch, 1.0));
            count += 1;
        }
    }
    if worst <= 1e-4 {
        Ok(format!("{count} instances, worst relative error {worst:.2e}"))
    } else {
        Err(format!("worst relative error {worst:.2e} over {count} instances"))
    }
}

// --- cross-task and metrics -------------------------------------------------

fn matrix_config() -> ExperimentConfig {
    ExperimentConfig::new(TaskKind::DoubleCheeseBurger)
}

fn cross_task(shared: &mut Shared) -> Outcome {
    let cfg = matrix_config();
    let mut policies = BTreeMap::new();
    for task in TaskKind::ALL {
        let run = train_featurized(task, &cfg).map_err(|e| e.to_string())?;
        policies.insert(task, run.policy);
    }
    let m = cross_task_matrix(&policies, &cfg).map_err(|e| e.to_string())?;
    let dcb_row: Vec<f64> = TaskKind::ALL
        .iter()
        .map(|&t| m.cell(TaskKind::DoubleCheeseBurger, t).unwrap().sr)
        .collect();
    let cs_on_dcb = m.cell(TaskKind::CheeseSandwich, TaskKind::DoubleCheeseBurger).unwrap().sr;
    shared.matrix = Some(m);
    let detail = format!("DCB-trained SR {dcb_row:?}, CS-trained on DCB {cs_on_dcb}");
    if dcb_row.iter().all(|&sr| sr > 0.0) && cs_on_dcb <= 0.05 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn metric_algebra(shared: &mut Shared) -> Outcome {
    let expected: BTreeMap<TaskKind, usize> = TaskKind::ALL.into_iter().zip([15, 15, 23, 35]).collect();
    let mut emitted: Vec<(TaskKind, Metrics)> = Vec::new();
    if let Some(m) = &shared.matrix {
        for row in &m.cells {
            for (&t, cell) in m.cols.iter().zip(row) {
                emitted.push((t, cell.clone()));
            }
        }
    }
    let uniform = AnyPolicy::Featurized(FeaturizedPolicy::zeros(FEATURE_DIM, SCHEMA_VERSION, 1.0));
    for task in TaskKind::ALL {
        let mut cfg = ExperimentConfig::new(task);
        cfg.layout_count = 3;
        cfg.episodes_per_layout = 10;
        for p in [&uniform, &AnyPolicy::Expert] {
            emitted.push((task, evaluate(p, task, &cfg).map_err(|e| e.to_string())?));
        }
    }
    let mut zero_rows = 0;
    for (task, m) in &emitted {
        m.check_algebra().map_err(|e| format!("{}: {e}", task.name()))?;
        if m.timeout != expected[task] {
            return Err(format!("{} timeout {}", task.name(), m.timeout));
        }
        if m.sr == 0.0 {
            zero_rows += 1;
            if m.asst_cell() != "---" || m.asat != m.timeout as f64 || m.asat_cell() != format!("{}.00", m.timeout) {
                return Err(format!("{} SR=0 row rendered {} / {}", task.name(), m.asat_cell(), m.asst_cell()));
            }
        }
    }
    if zero_rows < 4 {
        return Err(format!("only {zero_rows} SR=0 rows emitted"));
    }
    Ok(format!("{} metrics rows checked, {zero_rows} with SR = 0", emitted.len()))
}

// --- CLI determinism --------------------------------------------------------

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn run_cli(args: &[&str], cwd: &Path) -> Result<Vec<u8>, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_planlab"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.code() != Some(0) {
        return Err(format!("{args:?} exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)));
    }
    Ok(o.stdout)
}

fn determinism(_: &mut Shared) -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    fs::write(
        root.join("train.toml"),
        "schema = 1\ntask = \"cheese_sandwich\"\noutput_dir = \"train\"\n[featurized]\nsteps = 300\n",
    )
    .unwrap();
    fs::write(
        root.join("eval.toml"),
        "schema = 1\ntask = \"cheese_sandwich\"\nlayout_count = 3\nepisodes_per_layout = 10\noutput_dir = \"eval\"\n",
    )
    .unwrap();
    fs::write(
        root.join("xm.toml"),
        "schema = 1\ntask = \"burger\"\nlayout_count = 2\nepisodes_per_layout = 10\noutput_dir = \"xm\"\n\
         [featurized]\nsteps = 200\ntrain_layouts = 1\n",
    )
    .unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["plan", "double_cheese_burger", "--out", "plan"],
        vec!["plan", "burger", "--sample-seed", "3", "--out", "plan"],
        vec!["export-dataset", "cheese_burger", "--mode", "all-states", "--out", "dataset.jsonl"],
        vec!["train", "train.toml"],
        vec!["eval", "train/policy_featurized.json", "cheese_sandwich", "eval.toml"],
        vec!["xmatrix", "xm.toml"],
        vec!["theory", "--suite", "amplify", "--out", "th-amplify"],
        vec!["theory", "--suite", "subtask", "--out", "th-subtask"],
    ];
    let mut compared = 0;
    for args in &commands {
        let first_out = run_cli(args, root)?;
        let first = snapshot(root);
        let second_out = run_cli(args, root)?;
        let second = snapshot(root);
        if first_out != second_out {
            return Err(format!("{args:?}: stdout differs between runs"));
        }
        if first != second {
            let diff: Vec<_> = first
                .keys()
                .chain(second.keys())
                .filter(|k| first.get(*k) != second.get(*k))
                .map(|k| k.display().to_string())
                .collect();
            return Err(format!("{args:?}: files differ: {diff:?}"));
        }
        compared += 1;
    }
    let files = snapshot(root).len();
    Ok(format!("{compared} commands rerun, {files} files byte-identical"))
}
