use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use planlab::env::{write_trajectory_jsonl, TaskMdp, DEFAULT_STATE_CAP};
use planlab::expert::{build_dataset, complete_expert_policy, plan_optimal, DatasetMode};
use planlab::grpo::FeaturizedPolicy;
use planlab::harness::{
    cross_task_matrix, evaluate, CheckStatus, metrics_csv, run_training, train_featurized, verify_theory, AnyPolicy,
    ExperimentConfig, OutputDir, Suite, TheoryOptions,
};
use planlab::kitchen::{build_task, sample_layout, KitchenLayout, TaskKind};
use planlab::Error;

#[derive(Parser)]
#[command(name = "planlab", version, about = "Minimal-turn planning, single-turn GRPO and success-probability checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Task {
    CheeseSandwich,
    Burger,
    CheeseBurger,
    DoubleCheeseBurger,
}

impl From<Task> for TaskKind {
    fn from(t: Task) -> Self {
        match t {
            Task::CheeseSandwich => TaskKind::CheeseSandwich,
            Task::Burger => TaskKind::Burger,
            Task::CheeseBurger => TaskKind::CheeseBurger,
            Task::DoubleCheeseBurger => TaskKind::DoubleCheeseBurger,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    All,
    Amplify,
    Recursion,
    Improve,
    Subtask,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    TrajectoryOnly,
    AllStates,
}

#[derive(Subcommand)]
enum Command {
    /// Plan the expert trajectory and write `<task>.traj.jsonl`.
    Plan {
        task: Task,
        /// Layout file; the canonical layout otherwise.
        #[arg(long, conflicts_with = "sample_seed")]
        layout: Option<PathBuf>,
        /// Plan on a sampled layout and also write it as `<task>.layout.json`.
        #[arg(long)]
        sample_seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Train the policies described by a config file.
    Train { config: PathBuf },
    /// Evaluate a policy file (or `expert`) and write metrics.csv.
    Eval {
        policy: String,
        task: Task,
        config: PathBuf,
    },
    /// Cross-task generalization matrix of featurized policies.
    Xmatrix { config: PathBuf },
    /// Run the theorem suites and write report.json.
    Theory {
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
        #[arg(long, default_value = "planlab-theory")]
        out: PathBuf,
        /// Monte-Carlo episodes per recursion case.
        #[arg(long, default_value_t = 100_000)]
        episodes: usize,
        /// Random single-turn instances for the amplification suite.
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the single-turn dataset of a task as JSONL.
    ExportDataset {
        task: Task,
        #[arg(long)]
        layout: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "trajectory-only")]
        mode: ModeArg,
        /// Output file; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Outcome {
    Ok,
    CheckFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> planlab::Result<Outcome> {
    match cmd {
        Command::Plan {
            task,
            layout,
            sample_seed,
            out,
        } => plan(task.into(), layout, sample_seed, &out),
        Command::Train { config } => train(&config),
        Command::Eval { policy, task, config } => eval(&policy, task.into(), &config),
        Command::Xmatrix { config } => xmatrix(&config),
        Command::Theory {
            suite,
            out,
            episodes,
            instances,
            seed,
        } => theory(suite, &out, episodes, instances, seed),
        Command::ExportDataset { task, layout, mode, out } => export_dataset(task.into(), layout, mode, out),
    }
}

fn load_layout(task: TaskKind, layout: Option<PathBuf>) -> planlab::Result<KitchenLayout> {
    match layout {
        Some(p) => KitchenLayout::load(&p),
        None => Ok(KitchenLayout::canonical(task)),
    }
}

fn plan(task: TaskKind, layout: Option<PathBuf>, sample_seed: Option<u64>, out: &Path) -> planlab::Result<Outcome> {
    let layout = match sample_seed {
        Some(seed) => sample_layout(task, seed),
        None => load_layout(task, layout)?,
    };
    std::fs::create_dir_all(out)?;
    if sample_seed.is_some() {
        std::fs::write(out.join(format!("{}.layout.json", task.name())), layout.to_json())?;
    }
    let mdp = build_task(task, &layout)?;
    let traj = plan_optimal(&mdp, &mdp.initial_state(), DEFAULT_STATE_CAP)?;
    let path = out.join(format!("{}.traj.jsonl", task.name()));
    write_trajectory_jsonl(&mdp, &traj.steps, std::fs::File::create(&path)?)?;
    println!(
        "{}: {} actions, {:?}, written to {}",
        task.name(),
        traj.len(),
        traj.uniqueness,
        path.display()
    );
    for (i, (_, a)) in traj.steps.steps.iter().enumerate() {
        println!("{i:>3} {}", mdp.action_name(*a));
    }
    Ok(Outcome::Ok)
}

fn train(config: &Path) -> planlab::Result<Outcome> {
    let cfg = ExperimentConfig::load(config)?;
    let run = run_training(&cfg)?;
    println!("expert: {} actions, {:?}", run.expert.len(), run.expert.uniqueness);
    let mut ok = true;
    if let Some((_, _, report)) = &run.tabular {
        println!(
            "tabular: p_ref {:.6} -> p_star {:.6} after {} iterations (converged: {})",
            report.p_ref,
            report.p_star,
            report.iterations(),
            report.fixed_point_reached
        );
        ok &= report.p_star > report.p_ref || report.p_ref == 1.0;
    }
    if let Some(f) = &run.featurized {
        println!("featurized: {} steps on {} states", f.curve.len(), f.dataset_len);
    }
    println!("artifacts in {}", cfg.output_dir.display());
    Ok(if ok { Outcome::Ok } else { Outcome::CheckFailed })
}

fn eval(policy: &str, task: TaskKind, config: &Path) -> planlab::Result<Outcome> {
    let cfg = ExperimentConfig::load(config)?;
    let pi = AnyPolicy::load(policy)?;
    let metrics = evaluate(&pi, task, &cfg)?;
    let csv = metrics_csv(&[(task, pi.label(), &metrics)]);
    let mut out = OutputDir::open(&cfg.output_dir)?;
    out.write("metrics.csv", csv.as_bytes())?;
    let mut json = serde_json::to_string_pretty(&metrics)?;
    json.push('\n');
    out.write("metrics.json", json.as_bytes())?;
    out.finish("eval", &cfg.hash(), None)?;
    print!("{csv}");
    Ok(match metrics.check_algebra() {
        Ok(()) => Outcome::Ok,
        Err(msg) => {
            eprintln!("metric check failed: {msg}");
            Outcome::CheckFailed
        }
    })
}

fn xmatrix(config: &Path) -> planlab::Result<Outcome> {
    let cfg = ExperimentConfig::load(config)?;
    let mut policies = BTreeMap::new();
    let mut trained = Vec::new();
    for task in TaskKind::ALL {
        let p = match cfg.policies.get(&task) {
            Some(path) => FeaturizedPolicy::from_json(&std::fs::read_to_string(path)?)?,
            None => {
                let p = train_featurized(task, &cfg)?.policy;
                trained.push((task, p.to_json()));
                p
            }
        };
        policies.insert(task, p);
    }
    let matrix = cross_task_matrix(&policies, &cfg)?;
    let mut out = OutputDir::open(&cfg.output_dir)?;
    for (task, json) in &trained {
        out.write(&format!("policy_featurized_{}.json", task.name()), json.as_bytes())?;
    }
    let csv = matrix.to_csv();
    out.write("matrix.csv", csv.as_bytes())?;
    out.write("matrix.json", matrix.to_json().as_bytes())?;
    out.finish("xmatrix", &cfg.hash(), None)?;
    print!("{csv}");
    let bad = matrix.cells.iter().flatten().find_map(|m| m.check_algebra().err());
    Ok(match bad {
        None => Outcome::Ok,
        Some(msg) => {
            eprintln!("metric check failed: {msg}");
            Outcome::CheckFailed
        }
    })
}

fn theory(suite: SuiteArg, out: &Path, episodes: usize, instances: usize, seed: u64) -> planlab::Result<Outcome> {
    let opts = TheoryOptions {
        suite: match suite {
            SuiteArg::All => Suite::All,
            SuiteArg::Amplify => Suite::Amplify,
            SuiteArg::Recursion => Suite::Recursion,
            SuiteArg::Improve => Suite::Improve,
            SuiteArg::Subtask => Suite::Subtask,
        },
        seed,
        amplify_instances: instances,
        mc_episodes: episodes,
        ..TheoryOptions::default()
    };
    let report = verify_theory(&opts)?;
    let mut dir = OutputDir::open(out)?;
    dir.write("report.json", report.to_json().as_bytes())?;
    dir.finish("theory", &opts.hash(), None)?;
    for c in report.checks.iter().filter(|c| c.status != CheckStatus::Pass) {
        println!("{:?} {}/{} {}", c.status, c.suite, c.name, c.reason.as_deref().unwrap_or(""));
    }
    println!(
        "{} checks, {} failed, {} skipped",
        report.checks_run, report.failures, report.skipped
    );
    Ok(if report.passed { Outcome::Ok } else { Outcome::CheckFailed })
}

fn export_dataset(
    task: TaskKind,
    layout: Option<PathBuf>,
    mode: ModeArg,
    out: Option<PathBuf>,
) -> planlab::Result<Outcome> {
    let mdp = build_task(task, &load_layout(task, layout)?)?;
    let traj = plan_optimal(&mdp, &mdp.initial_state(), DEFAULT_STATE_CAP)?;
    let (mode, extra) = match mode {
        ModeArg::TrajectoryOnly => (DatasetMode::TrajectoryOnly, Vec::new()),
        ModeArg::AllStates => {
            let space = planlab::evalprob::StateSpace::build(&mdp, &[mdp.initial_state()], DEFAULT_STATE_CAP)?;
            (DatasetMode::AllStates, space.live_states())
        }
    };
    let expert = complete_expert_policy(&mdp, &traj, &[], DEFAULT_STATE_CAP)?;
    let ds = build_dataset(&mdp, &expert, &traj, &extra, mode)?;
    match out {
        Some(p) => ds.write_jsonl(std::fs::File::create(p)?)?,
        None => ds.write_jsonl(std::io::stdout().lock())?,
    }
    Ok(Outcome::Ok)
}
