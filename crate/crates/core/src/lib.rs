//! Multi-turn task planning reduced to single-turn reasoning.
//!
//! [`env`] defines deterministic tasks with a binary completion reward,
//! [`kitchen`] a concrete cooking domain, [`expert`] minimal-turn experts and
//! the single-turn dataset they induce, [`grpo`] exact and sampled GRPO on
//! that dataset, [`evalprob`] minimal-turn success probabilities and
//! [`harness`] the experiments and CLI plumbing.

pub mod env;
pub mod error;
pub mod evalprob;
pub mod expert;
pub mod grpo;
pub mod harness;
pub mod kitchen;

pub use error::{Error, Result};
