//! Deterministic finite-horizon task MDPs and the machinery shared by every
//! concrete environment: stepping, seeded rollouts, reachability and
//! trajectory dumps.
//!
//! States are opaque canonical byte strings ([`StateKey`]); each environment
//! owns its encoding. Policies only ever see a state together with its
//! ordered list of valid actions.

mod fixtures;
mod graph;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use fixtures::{BanditMdp, ChainMdp, TwoPathMdp};
pub use graph::{reachable_states, Reachable, StateGraph, DEFAULT_STATE_CAP};

/// Canonical, byte-comparable encoding of a full environment state.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey(Box<[u8]>);

impl StateKey {
    pub fn from_bytes(bytes: impl Into<Box<[u8]>>) -> Self {
        Self(bytes.into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }
}

impl fmt::Debug for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StateKey({})", self.to_hex())
    }
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for StateKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        hex::decode(s)
            .map(StateKey::from_bytes)
            .map_err(|e| Error::MalformedState(format!("{s}: {e}")))
    }
}

impl Serialize for StateKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for StateKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Index into an environment's global action vocabulary.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub u16);

impl fmt::Debug for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Fixed-length real feature vector for a (state, action) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema_version: u8,
}

/// One outgoing edge of a state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transition {
    pub action: ActionId,
    pub next: StateKey,
    pub completes: bool,
}

/// A deterministic finite-horizon task with a binary completion reward.
///
/// `valid_actions` must be non-empty and sorted ascending. `next_state` and
/// `completes` are only called with valid actions; use [`step`] and
/// [`is_success`] for checked access.
pub trait TaskMdp: Send + Sync {
    fn initial_state(&self) -> StateKey;

    fn horizon(&self) -> usize;

    fn valid_actions(&self, s: &StateKey) -> Vec<ActionId>;

    fn next_state(&self, s: &StateKey, a: ActionId) -> StateKey;

    fn completes(&self, s: &StateKey, a: ActionId) -> bool;

    fn action_name(&self, a: ActionId) -> String {
        format!("a{}", a.0)
    }

    /// All outgoing edges in ascending action order.
    fn expand(&self, s: &StateKey) -> Vec<Transition> {
        self.valid_actions(s)
            .into_iter()
            .map(|a| Transition {
                action: a,
                next: self.next_state(s, a),
                completes: self.completes(s, a),
            })
            .collect()
    }

    fn featurize(&self, _s: &StateKey, _a: ActionId) -> Result<FeatureVector> {
        Err(Error::FeaturesUnsupported)
    }
}

fn check_valid(mdp: &dyn TaskMdp, s: &StateKey, a: ActionId) -> Result<()> {
    if mdp.valid_actions(s).binary_search(&a).is_ok() {
        Ok(())
    } else {
        Err(Error::InvalidAction {
            state: s.clone(),
            action: a,
        })
    }
}

/// Checked transition `f(s, a)`.
pub fn step(mdp: &dyn TaskMdp, s: &StateKey, a: ActionId) -> Result<StateKey> {
    check_valid(mdp, s, a)?;
    Ok(mdp.next_state(s, a))
}

/// Checked completion reward `R(s, a)` in {0, 1}.
pub fn is_success(mdp: &dyn TaskMdp, s: &StateKey, a: ActionId) -> Result<u8> {
    check_valid(mdp, s, a)?;
    Ok(u8::from(mdp.completes(s, a)))
}

/// A categorical action distribution per state.
pub trait Policy: Send + Sync {
    /// Probabilities aligned with `valid`.
    fn distribution(&self, mdp: &dyn TaskMdp, s: &StateKey, valid: &[ActionId])
        -> Result<Vec<f64>>;

    /// Probability of `a` in `s`.
    fn prob(&self, mdp: &dyn TaskMdp, s: &StateKey, a: ActionId) -> Result<f64> {
        let valid = mdp.valid_actions(s);
        let probs = self.distribution(mdp, s, &valid)?;
        Ok(valid
            .iter()
            .position(|&b| b == a)
            .map(|i| probs[i])
            .unwrap_or(0.0))
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn distribution(
        &self,
        mdp: &dyn TaskMdp,
        s: &StateKey,
        valid: &[ActionId],
    ) -> Result<Vec<f64>> {
        (**self).distribution(mdp, s, valid)
    }
}

/// Draws an index from `probs` with a single uniform variate.
pub fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Seed of the `index`-th episode of a batch.
pub fn episode_seed(base_seed: u64, index: u64) -> u64 {
    base_seed.wrapping_add(index)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<(StateKey, ActionId)>,
    pub success: bool,
    pub terminal_reward: u8,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Replays the transitions and checks consecutive consistency and the
    /// success flag against the MDP.
    pub fn is_consistent(&self, mdp: &dyn TaskMdp) -> bool {
        for w in self.steps.windows(2) {
            match step(mdp, &w[0].0, w[0].1) {
                Ok(next) if next == w[1].0 => {}
                _ => return false,
            }
        }
        let completed = match self.steps.last() {
            Some((s, a)) => matches!(is_success(mdp, s, *a), Ok(1)),
            None => false,
        };
        let early = self.steps[..self.steps.len().saturating_sub(1)]
            .iter()
            .any(|(s, a)| mdp.completes(s, *a));
        completed == self.success && u8::from(self.success) == self.terminal_reward && !early
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub trajectory: Trajectory,
    pub turns_used: usize,
    pub timed_out: bool,
    pub rng_seed: u64,
}

/// Samples an episode from `s0`, stopping at the first completion or after
/// `max_turns` actions.
pub fn rollout(
    mdp: &dyn TaskMdp,
    policy: &dyn Policy,
    s0: &StateKey,
    max_turns: usize,
    seed: u64,
) -> Result<EpisodeOutcome> {
    if max_turns == 0 {
        return Err(Error::Config("max_turns must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::with_capacity(max_turns.min(64));
    let mut state = s0.clone();
    let mut success = false;
    for _ in 0..max_turns {
        let valid = mdp.valid_actions(&state);
        let probs = policy.distribution(mdp, &state, &valid)?;
        let a = valid[sample_index(&probs, &mut rng)];
        let done = mdp.completes(&state, a);
        let next = mdp.next_state(&state, a);
        steps.push((state, a));
        if done {
            success = true;
            break;
        }
        state = next;
    }
    let turns_used = steps.len();
    Ok(EpisodeOutcome {
        trajectory: Trajectory {
            steps,
            success,
            terminal_reward: u8::from(success),
        },
        turns_used,
        timed_out: !success,
        rng_seed: seed,
    })
}

#[derive(Serialize)]
struct TrajRecord<'a> {
    step: usize,
    state_key: &'a StateKey,
    action_id: ActionId,
    action_str: String,
    reward: u8,
}

/// Writes a trajectory as `.traj.jsonl`: one JSON record per step.
pub fn write_trajectory_jsonl(
    mdp: &dyn TaskMdp,
    traj: &Trajectory,
    mut out: impl Write,
) -> Result<()> {
    let last = traj.steps.len().saturating_sub(1);
    for (i, (s, a)) in traj.steps.iter().enumerate() {
        let rec = TrajRecord {
            step: i,
            state_key: s,
            action_id: *a,
            action_str: mdp.action_name(*a),
            reward: if i == last { traj.terminal_reward } else { 0 },
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Uniform;

    impl Policy for Uniform {
        fn distribution(
            &self,
            _mdp: &dyn TaskMdp,
            _s: &StateKey,
            valid: &[ActionId],
        ) -> Result<Vec<f64>> {
            Ok(vec![1.0 / valid.len() as f64; valid.len()])
        }
    }

    struct AlwaysAdvance;

    impl Policy for AlwaysAdvance {
        fn distribution(
            &self,
            _mdp: &dyn TaskMdp,
            _s: &StateKey,
            valid: &[ActionId],
        ) -> Result<Vec<f64>> {
            Ok(valid
                .iter()
                .map(|&a| if a == ChainMdp::ADVANCE { 1.0 } else { 0.0 })
                .collect())
        }
    }

    #[test]
    fn state_key_hex_round_trip() {
        let k = StateKey::from_bytes(vec![0u8, 7, 255]);
        assert_eq!(k.to_hex(), "0007ff");
        assert_eq!("0007ff".parse::<StateKey>().unwrap(), k);
        let json = serde_json::to_string(&k).unwrap();
        assert_eq!(serde_json::from_str::<StateKey>(&json).unwrap(), k);
    }

    #[test]
    fn step_on_chain() {
        let chain = ChainMdp::new(3);
        let s1 = step(&chain, &chain.state(0), ChainMdp::ADVANCE).unwrap();
        assert_eq!(s1, chain.state(1));
    }

    #[test]
    fn step_rejects_invalid_action() {
        let chain = ChainMdp::new(3);
        let err = step(&chain, &chain.state(0), ActionId(9)).unwrap_err();
        assert!(matches!(err, Error::InvalidAction { .. }));
        let err = is_success(&chain, &chain.state(0), ActionId(9)).unwrap_err();
        assert!(matches!(err, Error::InvalidAction { .. }));
    }

    #[test]
    fn success_only_on_last_chain_link() {
        let chain = ChainMdp::new(3);
        assert_eq!(is_success(&chain, &chain.state(2), ChainMdp::ADVANCE).unwrap(), 1);
        assert_eq!(is_success(&chain, &chain.state(0), ChainMdp::ADVANCE).unwrap(), 0);
        assert_eq!(is_success(&chain, &chain.state(2), ChainMdp::NOOP).unwrap(), 0);
    }

    #[test]
    fn expert_replay_uses_exactly_the_expert_turns() {
        let chain = ChainMdp::new(3);
        let out = rollout(&chain, &AlwaysAdvance, &chain.initial_state(), 10, 1).unwrap();
        assert!(out.trajectory.success);
        assert!(!out.timed_out);
        assert_eq!(out.turns_used, 3);
        assert!(out.trajectory.is_consistent(&chain));
    }

    #[test]
    fn uniform_chain_success_matches_all_advance() {
        let chain = ChainMdp::new(3);
        let mut successes = 0;
        for seed in 0..4000 {
            let out = rollout(&chain, &Uniform, &chain.initial_state(), 3, seed).unwrap();
            let all_advance = out.trajectory.steps.iter().all(|(_, a)| *a == ChainMdp::ADVANCE);
            assert_eq!(out.trajectory.success, all_advance && out.turns_used == 3);
            assert_eq!(out.timed_out, !out.trajectory.success);
            successes += usize::from(out.trajectory.success);
        }
        // 1/8 by enumeration of the 2^3 action sequences
        let rate = successes as f64 / 4000.0;
        assert!((rate - 0.125).abs() < 4.0 * (0.125f64 * 0.875 / 4000.0).sqrt());
    }

    #[test]
    fn rollout_times_out() {
        let chain = ChainMdp::new(5);
        let out = rollout(&chain, &AlwaysAdvance, &chain.initial_state(), 2, 0).unwrap();
        assert!(out.timed_out);
        assert!(!out.trajectory.success);
        assert_eq!(out.turns_used, 2);
        assert_eq!(out.trajectory.terminal_reward, 0);
    }

    #[test]
    fn rollout_requires_a_turn() {
        let chain = ChainMdp::new(3);
        assert!(rollout(&chain, &Uniform, &chain.initial_state(), 0, 0).is_err());
    }

    #[test]
    fn rollout_is_reproducible() {
        let chain = ChainMdp::new(4);
        let a = rollout(&chain, &Uniform, &chain.initial_state(), 6, 42).unwrap();
        let b = rollout(&chain, &Uniform, &chain.initial_state(), 6, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trajectory_dump_is_jsonl() {
        let chain = ChainMdp::new(2);
        let out = rollout(&chain, &AlwaysAdvance, &chain.initial_state(), 5, 0).unwrap();
        let mut buf = Vec::new();
        write_trajectory_jsonl(&chain, &out.trajectory, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let last: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(last["step"], 1);
        assert_eq!(last["reward"], 1);
        assert_eq!(last["action_str"], "advance");
    }

    #[test]
    fn sample_index_skips_zero_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(sample_index(&[0.0, 1.0, 0.0], &mut rng), 1);
        }
    }
}
