//! Experiment orchestration: configs, reference policies, training runs,
//! SR/ASAT/ASST evaluation, cross-task matrices and theory suites.

mod artifacts;
mod config;
mod matrix;
mod metrics;
mod reference;
mod theory;
mod train;

pub use artifacts::{ArtifactEntry, Manifest, OutputDir, RunStatus, MANIFEST_SCHEMA};
pub use config::{ExperimentConfig, FeaturizedConfig, ReferenceKind, TrainMode, CONFIG_SCHEMA};
pub use matrix::{cross_task_matrix, GeneralizationMatrix};
pub use metrics::{evaluate, evaluation_layouts, metrics_csv, AnyPolicy, Metrics};
pub use reference::{make_reference, MixturePolicy};
pub use theory::{verify_theory, CheckResult, CheckStatus, Suite, TheoryOptions, TheoryReport, REPORT_SCHEMA};
pub use train::{
    featurized_dataset, run_training, train_featurized, training_layout, CurveRow, FeaturizedTraining, TrainingRun,
};
