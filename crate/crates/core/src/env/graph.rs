use std::collections::{HashMap, VecDeque};

use super::{ActionId, StateKey, TaskMdp};
use crate::error::{Error, Result};

/// Default cap on the number of states any closure may hold.
pub const DEFAULT_STATE_CAP: usize = 2_000_000;

/// Depth-limited breadth-first closure with a witness path per state.
#[derive(Debug, Clone)]
pub struct Reachable {
    states: Vec<StateKey>,
    depths: Vec<usize>,
    parents: Vec<Option<(u32, ActionId)>>,
    index: HashMap<StateKey, u32>,
}

impl Reachable {
    /// States ordered by (depth, key).
    pub fn states(&self) -> &[StateKey] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn contains(&self, s: &StateKey) -> bool {
        self.index.contains_key(s)
    }

    pub fn depth_of(&self, s: &StateKey) -> Option<usize> {
        self.index.get(s).map(|&i| self.depths[i as usize])
    }

    /// Action sequence that reaches `s` from the root in `depth_of(s)` steps.
    pub fn witness(&self, s: &StateKey) -> Option<Vec<ActionId>> {
        let mut i = *self.index.get(s)?;
        let mut path = Vec::new();
        while let Some((p, a)) = self.parents[i as usize] {
            path.push(a);
            i = p;
        }
        path.reverse();
        Some(path)
    }
}

/// Breadth-first closure of `s0` under all valid actions, cut at
/// `depth_limit`. Fails once more than `cap` states are discovered.
pub fn reachable_states(
    mdp: &dyn TaskMdp,
    s0: &StateKey,
    depth_limit: usize,
    cap: usize,
) -> Result<Reachable> {
    let mut out = Reachable {
        states: vec![s0.clone()],
        depths: vec![0],
        parents: vec![None],
        index: HashMap::from([(s0.clone(), 0)]),
    };
    let mut layer_start = 0;
    for depth in 1..=depth_limit {
        let layer_end = out.states.len();
        if layer_start == layer_end {
            break;
        }
        let mut fresh: HashMap<StateKey, (u32, ActionId)> = HashMap::new();
        for i in layer_start..layer_end {
            for t in mdp.expand(&out.states[i]) {
                if !out.index.contains_key(&t.next) {
                    fresh.entry(t.next).or_insert((i as u32, t.action));
                }
            }
        }
        if out.states.len() + fresh.len() > cap {
            return Err(Error::StateBudgetExceeded { cap });
        }
        let mut layer: Vec<_> = fresh.into_iter().collect();
        layer.sort_by(|a, b| a.0.cmp(&b.0));
        for (s, parent) in layer {
            out.index.insert(s.clone(), out.states.len() as u32);
            out.states.push(s);
            out.depths.push(depth);
            out.parents.push(Some(parent));
        }
        layer_start = layer_end;
    }
    Ok(out)
}

/// Outgoing edge in a [`StateGraph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub action: ActionId,
    pub completes: bool,
    pub next: u32,
}

/// Full forward closure of a set of roots with every edge materialized.
#[derive(Debug, Clone)]
pub struct StateGraph {
    states: Vec<StateKey>,
    index: HashMap<StateKey, u32>,
    offsets: Vec<u32>,
    edges: Vec<Edge>,
}

impl StateGraph {
    pub fn explore(mdp: &dyn TaskMdp, roots: &[StateKey], cap: usize) -> Result<Self> {
        let mut states = Vec::new();
        let mut index = HashMap::new();
        let mut queue = VecDeque::new();
        for r in roots {
            if !index.contains_key(r) {
                index.insert(r.clone(), states.len() as u32);
                states.push(r.clone());
                queue.push_back(states.len() - 1);
            }
        }
        let mut succ: Vec<Vec<(ActionId, bool, u32)>> = Vec::new();
        while let Some(i) = queue.pop_front() {
            let mut out = Vec::new();
            for t in mdp.expand(&states[i]) {
                let j = match index.get(&t.next) {
                    Some(&j) => j,
                    None => {
                        if states.len() >= cap {
                            return Err(Error::StateBudgetExceeded { cap });
                        }
                        let j = states.len() as u32;
                        index.insert(t.next.clone(), j);
                        states.push(t.next);
                        queue.push_back(j as usize);
                        j
                    }
                };
                out.push((t.action, t.completes, j));
            }
            if succ.len() <= i {
                succ.resize(i + 1, Vec::new());
            }
            succ[i] = out;
        }
        let mut offsets = Vec::with_capacity(states.len() + 1);
        let mut edges = Vec::new();
        offsets.push(0);
        for out in succ {
            edges.extend(out.into_iter().map(|(action, completes, next)| Edge {
                action,
                completes,
                next,
            }));
            offsets.push(edges.len() as u32);
        }
        Ok(Self {
            states,
            index,
            offsets,
            edges,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[StateKey] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &StateKey {
        &self.states[i]
    }

    pub fn index_of(&self, s: &StateKey) -> Option<usize> {
        self.index.get(s).map(|&i| i as usize)
    }

    /// Outgoing edges of state `i` in ascending action order.
    pub fn edges(&self, i: usize) -> &[Edge] {
        &self.edges[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }

    /// Predecessor lists (deduplicated).
    pub fn predecessors(&self) -> Vec<Vec<u32>> {
        let mut preds = vec![Vec::new(); self.states.len()];
        for i in 0..self.states.len() {
            for e in self.edges(i) {
                let p = &mut preds[e.next as usize];
                if p.last() != Some(&(i as u32)) {
                    p.push(i as u32);
                }
            }
        }
        preds
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{step, ChainMdp};
    use std::collections::BTreeSet;

    #[test]
    fn depth_zero_is_root_only() {
        let chain = ChainMdp::new(3);
        let r = reachable_states(&chain, &chain.initial_state(), 0, DEFAULT_STATE_CAP).unwrap();
        assert_eq!(r.states(), &[chain.initial_state()]);
    }

    #[test]
    fn chain_depth_three_is_exact() {
        let chain = ChainMdp::new(3);
        let r = reachable_states(&chain, &chain.initial_state(), 3, DEFAULT_STATE_CAP).unwrap();
        let got: BTreeSet<_> = r.states().iter().cloned().collect();
        let want: BTreeSet<_> = (0..=3)
            .map(|i| chain.state(i))
            .chain((0..3).map(|i| chain.stuck(i)))
            .collect();
        assert_eq!(got, want);
        assert_eq!(r.depth_of(&chain.state(3)), Some(3));
        assert_eq!(r.depth_of(&chain.stuck(0)), Some(1));
    }

    #[test]
    fn ordering_is_by_depth_then_key() {
        let chain = ChainMdp::new(4);
        let r = reachable_states(&chain, &chain.initial_state(), 4, DEFAULT_STATE_CAP).unwrap();
        let keyed: Vec<_> = r
            .states()
            .iter()
            .map(|s| (r.depth_of(s).unwrap(), s.clone()))
            .collect();
        let mut sorted = keyed.clone();
        sorted.sort();
        assert_eq!(keyed, sorted);
    }

    #[test]
    fn witnesses_replay() {
        let chain = ChainMdp::new(4);
        let s0 = chain.initial_state();
        let r = reachable_states(&chain, &s0, 3, DEFAULT_STATE_CAP).unwrap();
        for s in r.states() {
            let path = r.witness(s).unwrap();
            assert_eq!(path.len(), r.depth_of(s).unwrap());
            let mut cur = s0.clone();
            for a in path {
                cur = step(&chain, &cur, a).unwrap();
            }
            assert_eq!(&cur, s);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let chain = ChainMdp::new(6);
        let err = reachable_states(&chain, &chain.initial_state(), 6, 3).unwrap_err();
        assert!(matches!(err, Error::StateBudgetExceeded { cap: 3 }));
        let err = StateGraph::explore(&chain, &[chain.initial_state()], 3).unwrap_err();
        assert!(matches!(err, Error::StateBudgetExceeded { cap: 3 }));
    }

    #[test]
    fn graph_matches_expand() {
        let chain = ChainMdp::new(3);
        let g = StateGraph::explore(&chain, &[chain.initial_state()], DEFAULT_STATE_CAP).unwrap();
        assert_eq!(g.len(), 7);
        for i in 0..g.len() {
            let want = chain.expand(g.state(i));
            let got = g.edges(i);
            assert_eq!(want.len(), got.len());
            for (w, e) in want.iter().zip(got) {
                assert_eq!(w.action, e.action);
                assert_eq!(w.completes, e.completes);
                assert_eq!(&w.next, g.state(e.next as usize));
            }
        }
        let preds = g.predecessors();
        let c1 = g.index_of(&chain.state(1)).unwrap();
        assert_eq!(preds[c1], vec![g.index_of(&chain.state(0)).unwrap() as u32]);
    }
}
