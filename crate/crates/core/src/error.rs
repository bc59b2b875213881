use thiserror::Error;

use crate::env::{ActionId, StateKey};

/// Errors raised across the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("action {action} is not valid in state {state}")]
    InvalidAction { state: StateKey, action: ActionId },

    #[error("policy has no distribution for state {0}")]
    PolicyStateMissing(StateKey),

    #[error("state budget of {cap} states exceeded")]
    StateBudgetExceeded { cap: usize },

    #[error("goal unreachable from {0}")]
    GoalUnreachable(StateKey),

    #[error("goal unreachable from {} state(s)", .0.len())]
    DeadEnds(Vec<StateKey>),

    #[error("infeasible layout: {0}")]
    InfeasibleLayout(String),

    #[error("index {index} out of range (must be < {bound})")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("feature schema mismatch: expected {expected}, found {found}")]
    SchemaMismatch { expected: u8, found: u8 },

    #[error("malformed state key: {0}")]
    MalformedState(String),

    #[error("environment does not provide state features")]
    FeaturesUnsupported,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("old policy assigns zero probability to a valid action in state {0}")]
    RatioUndefined(StateKey),

    #[error("policy supports do not match in state {0}")]
    SupportMismatch(StateKey),

    #[error("expert policy does not cover state {0}")]
    ExpertCoverageMissing(StateKey),

    #[error("start state {0} cannot reach the goal")]
    UnreachableStart(StateKey),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
