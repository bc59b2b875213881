//! Minimal-turn experts: optimal planning with a uniqueness certificate,
//! the expert policy over arbitrary states and the single-turn dataset it
//! induces.

mod dataset;
mod planner;
mod policy;

pub use dataset::{build_dataset, DatasetEntry, DatasetMode, SingleTurnDataset};
pub use planner::{certify_uniqueness, plan_optimal, ExpertTrajectory, Uniqueness, TIE_BREAK_RULE};
pub use policy::{complete_expert_policy, step_reward, ExpertPolicy, Provenance};
