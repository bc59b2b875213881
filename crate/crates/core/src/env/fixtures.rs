//! Small hand-built MDPs used as test fixtures and in the theory suites.

use super::{ActionId, FeatureVector, StateKey, TaskMdp};
use crate::error::Result;

const CHAIN: u8 = 0;
const STUCK: u8 = 1;

/// A chain of `len` decision states. `advance` moves one link forward and
/// completes the task from the last link; `noop` drops into an absorbing
/// stuck state from which the goal is unreachable.
#[derive(Clone, Debug)]
pub struct ChainMdp {
    len: u8,
    horizon: usize,
}

impl ChainMdp {
    pub const ADVANCE: ActionId = ActionId(0);
    pub const NOOP: ActionId = ActionId(1);

    pub fn new(len: u8) -> Self {
        assert!(len >= 1, "chain needs at least one link");
        Self {
            len,
            horizon: len as usize,
        }
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `chain_i`; `chain_len` is the post-completion state.
    pub fn state(&self, i: u8) -> StateKey {
        assert!(i <= self.len);
        StateKey::from_bytes(vec![CHAIN, i])
    }

    pub fn stuck(&self, i: u8) -> StateKey {
        assert!(i < self.len);
        StateKey::from_bytes(vec![STUCK, i])
    }

    fn decode(s: &StateKey) -> (u8, u8) {
        let b = s.as_bytes();
        (b[0], b[1])
    }
}

impl TaskMdp for ChainMdp {
    fn initial_state(&self) -> StateKey {
        self.state(0)
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn valid_actions(&self, s: &StateKey) -> Vec<ActionId> {
        match Self::decode(s) {
            (CHAIN, i) if i < self.len => vec![Self::ADVANCE, Self::NOOP],
            _ => vec![Self::NOOP],
        }
    }

    fn next_state(&self, s: &StateKey, a: ActionId) -> StateKey {
        match (Self::decode(s), a) {
            ((CHAIN, i), Self::ADVANCE) => self.state(i + 1),
            ((CHAIN, i), _) if i < self.len => self.stuck(i),
            _ => s.clone(),
        }
    }

    fn completes(&self, s: &StateKey, a: ActionId) -> bool {
        a == Self::ADVANCE && Self::decode(s) == (CHAIN, self.len - 1)
    }

    fn action_name(&self, a: ActionId) -> String {
        match a {
            Self::ADVANCE => "advance".into(),
            Self::NOOP => "noop".into(),
            other => format!("a{}", other.0),
        }
    }
}

/// Two symmetric routes of equal length to the goal: `left` or `right`,
/// then `finish`.
#[derive(Clone, Debug, Default)]
pub struct TwoPathMdp;

impl TwoPathMdp {
    pub const LEFT: ActionId = ActionId(0);
    pub const RIGHT: ActionId = ActionId(1);
    pub const FINISH: ActionId = ActionId(2);

    const START: u8 = 0;
    const L: u8 = 1;
    const R: u8 = 2;
    const DONE: u8 = 3;

    pub fn state(tag: u8) -> StateKey {
        StateKey::from_bytes(vec![tag])
    }
}

impl TaskMdp for TwoPathMdp {
    fn initial_state(&self) -> StateKey {
        Self::state(Self::START)
    }

    fn horizon(&self) -> usize {
        2
    }

    fn valid_actions(&self, s: &StateKey) -> Vec<ActionId> {
        match s.as_bytes()[0] {
            Self::START => vec![Self::LEFT, Self::RIGHT],
            _ => vec![Self::FINISH],
        }
    }

    fn next_state(&self, s: &StateKey, a: ActionId) -> StateKey {
        match (s.as_bytes()[0], a) {
            (Self::START, Self::LEFT) => Self::state(Self::L),
            (Self::START, _) => Self::state(Self::R),
            _ => Self::state(Self::DONE),
        }
    }

    fn completes(&self, s: &StateKey, _a: ActionId) -> bool {
        matches!(s.as_bytes()[0], Self::L | Self::R)
    }

    fn action_name(&self, a: ActionId) -> String {
        match a {
            Self::LEFT => "left".into(),
            Self::RIGHT => "right".into(),
            _ => "finish".into(),
        }
    }
}

/// Independent one-step states. State `i` offers `arms[i]` actions and is
/// completed by arm `correct[i]`. Features are the one-hot of the arm.
#[derive(Clone, Debug)]
pub struct BanditMdp {
    arms: Vec<u16>,
    correct: Vec<u16>,
    width: usize,
}

impl BanditMdp {
    pub fn new(arms: Vec<u16>, correct: Vec<u16>) -> Self {
        assert_eq!(arms.len(), correct.len());
        assert!(arms.iter().zip(&correct).all(|(n, c)| c < n));
        let width = arms.iter().copied().max().unwrap_or(1) as usize;
        Self {
            arms,
            correct,
            width,
        }
    }

    pub fn state(&self, i: usize) -> StateKey {
        StateKey::from_bytes((i as u32).to_be_bytes().to_vec())
    }

    pub fn states(&self) -> Vec<StateKey> {
        (0..self.arms.len()).map(|i| self.state(i)).collect()
    }

    pub fn correct(&self, i: usize) -> ActionId {
        ActionId(self.correct[i])
    }

    fn index(s: &StateKey) -> usize {
        u32::from_be_bytes(s.as_bytes().try_into().expect("bandit state")) as usize
    }
}

impl TaskMdp for BanditMdp {
    fn initial_state(&self) -> StateKey {
        self.state(0)
    }

    fn horizon(&self) -> usize {
        1
    }

    fn valid_actions(&self, s: &StateKey) -> Vec<ActionId> {
        (0..self.arms[Self::index(s)]).map(ActionId).collect()
    }

    fn next_state(&self, s: &StateKey, _a: ActionId) -> StateKey {
        s.clone()
    }

    fn completes(&self, s: &StateKey, a: ActionId) -> bool {
        self.correct(Self::index(s)) == a
    }

    fn featurize(&self, _s: &StateKey, a: ActionId) -> Result<FeatureVector> {
        let mut values = vec![0.0; self.width];
        values[a.0 as usize] = 1.0;
        Ok(FeatureVector {
            values,
            schema_version: 0,
        })
    }
}
