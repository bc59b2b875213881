//! State-action features for linear-softmax policies.
//!
//! Layout of a schema-1 vector:
//!
//! | block                 | width |
//! |-----------------------|-------|
//! | agent cell one-hot    | 64    |
//! | held item one-hot     | 13    |
//! | ingredient status     | 24    |
//! | station occupancy     | 8     |
//! | action one-hot        | 24    |
//! | action precondition   | 1     |
//! | recipe-relative       | 60    |
//!
//! The first four blocks depend on the state only and cancel inside a
//! softmax over actions; the recipe-relative block carries the signal. It
//! is indexed by ingredient role so that what is learned about bread
//! transfers to buns, but nothing about cooking is learned from a task
//! without patties.

use super::state::{
    decode_key, Header, Item, ItemKind, KitchenAction, KitchenState, Role, StationKind, MAX_GRID,
    MAX_STATIONS, NUM_ACTIONS, SCHEMA_VERSION,
};
use super::legal_actions;
use crate::env::{ActionId, FeatureVector, StateKey};
use crate::error::Result;

const CELLS: usize = (MAX_GRID as usize) * (MAX_GRID as usize);
const HELD: usize = 1 + 2 * ItemKind::ALL.len();
const STATUS: usize = 4 * ItemKind::ALL.len();

const AGENT_OFF: usize = 0;
const HELD_OFF: usize = AGENT_OFF + CELLS;
const STATUS_OFF: usize = HELD_OFF + HELD;
const OCC_OFF: usize = STATUS_OFF + STATUS;
const ACTION_OFF: usize = OCC_OFF + MAX_STATIONS;
const PRECOND_OFF: usize = ACTION_OFF + NUM_ACTIONS;
const REL_OFF: usize = PRECOND_OFF + 1;

// role-indexed relational features
const FETCH_READY: usize = 0;
const FETCH_RAW_AT_PROC: usize = 1;
const FETCH_RAW_ELSEWHERE: usize = 2;
const CARRY_TO_PLATE: usize = 3;
const CARRY_TO_PROC: usize = 4;
const PICK_READY: usize = 5;
const PICK_RAW_AT_PROC: usize = 6;
const PICK_RAW_ELSEWHERE: usize = 7;
const PLACE_ON_PLATE: usize = 8;
const PLACE_FOR_PROCESSING: usize = 9;
const STACK_GOOD: usize = 10;
const ROLE_FEATURES: usize = 11;

// scalar relational features
const MOVE_PLATE_FIX: usize = 0;
const MOVE_PLATE_SERVE: usize = 1;
const MOVE_IDLE: usize = 2;
const MOVE_DROP_SPOT: usize = 3;
const MOVE_CARRY_OTHER: usize = 4;
const PICK_FIX_PLATE: usize = 5;
const PICK_OTHER: usize = 6;
const PLACE_DROP: usize = 7;
const PLACE_OTHER: usize = 8;
const STACK_BAD: usize = 9;
const COOK_NEEDED: usize = 10;
const COOK_OTHER: usize = 11;
const CUT_NEEDED: usize = 12;
const CUT_OTHER: usize = 13;
const PLATE_READY: usize = 14;
const PLATE_WRONG: usize = 15;
const SCALAR_FEATURES: usize = 16;

const REL: usize = ROLE_FEATURES * Role::COUNT + SCALAR_FEATURES;

/// Length of every schema-1 feature vector.
pub const FEATURE_DIM: usize = REL_OFF + REL;

/// Recipe progress on the plate.
struct Progress {
    prefix_ok: bool,
    complete: bool,
    next: Option<Item>,
}

impl Progress {
    fn of(recipe: &[Item], plate: &[Item]) -> Self {
        let prefix_ok = plate.len() <= recipe.len() && recipe[..plate.len()] == *plate;
        let complete = prefix_ok && plate.len() == recipe.len();
        let next = if prefix_ok && !complete {
            Some(recipe[plate.len()])
        } else {
            None
        };
        Self {
            prefix_ok,
            complete,
            next,
        }
    }

    /// `x` can go on the plate right now.
    fn is_next(&self, x: Item) -> bool {
        self.next == Some(x)
    }

    /// `x` is the next layer but still needs cooking or cutting.
    fn is_next_raw(&self, x: Item) -> bool {
        matches!(self.next, Some(n) if n.kind == x.kind && n.processed && !x.processed)
    }

    fn is_useful(&self, x: Item) -> bool {
        self.is_next(x) || self.is_next_raw(x)
    }
}

/// Feature vector of `(s, a)` under schema 1. `s` must be a kitchen state.
pub fn featurize(s: &StateKey, a: ActionId) -> Result<FeatureVector> {
    let (header, st) = decode_key(s)?;
    let mut v = vec![0.0; FEATURE_DIM];

    let cell = match st.agent {
        Some(i) => header.stations[i as usize].1,
        None => header.agent_start,
    };
    // re-index from the layout grid onto the fixed MAX_GRID grid
    let (x, y) = (cell % header.grid_size, cell / header.grid_size);
    v[AGENT_OFF + (y as usize) * (MAX_GRID as usize) + x as usize] = 1.0;

    v[HELD_OFF + st.held.map_or(0, |h| 1 + h.code() as usize)] = 1.0;

    let plate = header.plate_station();
    for (si, pile) in st.piles.iter().enumerate() {
        for it in pile {
            let base = STATUS_OFF + 4 * it.kind.index();
            v[base + usize::from(it.processed)] = 1.0;
            if si == plate {
                v[base + 2] = 1.0;
            }
        }
        if !pile.is_empty() {
            v[OCC_OFF + si] = 1.0;
        }
    }
    if let Some(h) = st.held {
        let base = STATUS_OFF + 4 * h.kind.index();
        v[base + usize::from(h.processed)] = 1.0;
        v[base + 3] = 1.0;
    }

    if let Some(ai) = v.get_mut(ACTION_OFF + a.0 as usize) {
        *ai = 1.0;
    }

    let action = KitchenAction::from_id(a);
    let legal = action.is_some_and(|act| legal_actions(&header, &st).contains(&act));
    if legal {
        v[PRECOND_OFF] = 1.0;
        relational(&header, &st, action.unwrap(), &mut v[REL_OFF..]);
    }

    Ok(FeatureVector {
        values: v,
        schema_version: SCHEMA_VERSION,
    })
}

fn relational(header: &Header, st: &KitchenState, a: KitchenAction, out: &mut [f64]) {
    let recipe = header.task.recipe();
    let plate = header.plate_station();
    let progress = Progress::of(&recipe, &st.piles[plate]);
    let station_kind = |i: usize| header.stations[i].0;
    let is_processor = |i: usize, x: Item| x.kind.processor() == Some(station_kind(i));

    let mut role = |f: usize, r: Role| out[f * Role::COUNT + r.index()] = 1.0;
    let mut flags = [false; SCALAR_FEATURES];

    match a {
        KitchenAction::Move(t) => {
            let t = t as usize;
            let top = st.piles[t].last().copied();
            match st.held {
                None => match top {
                    _ if t == plate && !progress.prefix_ok => flags[MOVE_PLATE_FIX] = true,
                    _ if t == plate && progress.complete => flags[MOVE_PLATE_SERVE] = true,
                    Some(x) if t != plate && progress.is_next(x) => {
                        role(FETCH_READY, x.kind.role())
                    }
                    Some(x) if t != plate && progress.is_next_raw(x) && is_processor(t, x) => {
                        role(FETCH_RAW_AT_PROC, x.kind.role())
                    }
                    Some(x) if t != plate && progress.is_next_raw(x) => {
                        role(FETCH_RAW_ELSEWHERE, x.kind.role())
                    }
                    _ => flags[MOVE_IDLE] = true,
                },
                Some(h) => {
                    if t == plate && progress.prefix_ok && progress.is_next(h) {
                        role(CARRY_TO_PLATE, h.kind.role());
                    } else if progress.is_next_raw(h) && is_processor(t, h) && top.is_none() {
                        role(CARRY_TO_PROC, h.kind.role());
                    } else if !progress.is_useful(h) && t != plate && top.is_none() {
                        flags[MOVE_DROP_SPOT] = true;
                    } else {
                        flags[MOVE_CARRY_OTHER] = true;
                    }
                }
            }
        }
        KitchenAction::Pick(_) => {
            let here = st.agent.unwrap() as usize;
            let top = *st.piles[here].last().unwrap();
            if here == plate {
                if progress.prefix_ok {
                    flags[PICK_OTHER] = true;
                } else {
                    flags[PICK_FIX_PLATE] = true;
                }
            } else if progress.is_next(top) {
                role(PICK_READY, top.kind.role());
            } else if progress.is_next_raw(top) && is_processor(here, top) {
                role(PICK_RAW_AT_PROC, top.kind.role());
            } else if progress.is_next_raw(top) {
                role(PICK_RAW_ELSEWHERE, top.kind.role());
            } else {
                flags[PICK_OTHER] = true;
            }
        }
        KitchenAction::Place(_) => {
            let here = st.agent.unwrap() as usize;
            let h = st.held.unwrap();
            if here == plate && progress.is_next(h) {
                role(PLACE_ON_PLATE, h.kind.role());
            } else if is_processor(here, h) && progress.is_next_raw(h) {
                role(PLACE_FOR_PROCESSING, h.kind.role());
            } else if here != plate && !progress.is_useful(h) {
                flags[PLACE_DROP] = true;
            } else {
                flags[PLACE_OTHER] = true;
            }
        }
        KitchenAction::Stack => {
            let h = st.held.unwrap();
            if progress.prefix_ok && progress.is_next(h) {
                role(STACK_GOOD, h.kind.role());
            } else {
                flags[STACK_BAD] = true;
            }
        }
        KitchenAction::Cook => {
            let needed = matches!(progress.next, Some(n) if n.kind == ItemKind::Patty);
            flags[if needed { COOK_NEEDED } else { COOK_OTHER }] = true;
        }
        KitchenAction::Cut => {
            let here = st.agent.unwrap() as usize;
            let needed = matches!(progress.next, Some(n) if n.kind == ItemKind::Cheese)
                && st.piles[here]
                    .iter()
                    .any(|i| i.kind == ItemKind::Cheese && !i.processed);
            flags[if needed { CUT_NEEDED } else { CUT_OTHER }] = true;
        }
        KitchenAction::Plate => {
            flags[if progress.complete { PLATE_READY } else { PLATE_WRONG }] = true;
        }
    }
    let scalar = &mut out[ROLE_FEATURES * Role::COUNT..];
    for (i, f) in flags.iter().enumerate() {
        if *f {
            scalar[i] = 1.0;
        }
    }
    debug_assert!(station_kind(plate) == StationKind::Plate);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{reachable_states, TaskMdp, DEFAULT_STATE_CAP};
    use crate::kitchen::{build_task, KitchenLayout, KitchenMdp, TaskKind};

    fn canonical(kind: TaskKind) -> KitchenMdp {
        build_task(kind, &KitchenLayout::canonical(kind)).unwrap()
    }

    fn ones(v: &FeatureVector) -> Vec<usize> {
        v.values
            .iter()
            .enumerate()
            .filter(|(_, x)| **x != 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    #[test]
    fn initial_move_to_stove_hand_computed() {
        let mdp = canonical(TaskKind::Burger);
        let s0 = mdp.initial_state();
        // canonical: stove is station 1, agent starts at (5, 2) on a 6x6 grid
        let v = featurize(&s0, KitchenAction::Move(1).id()).unwrap();
        let start_cell = AGENT_OFF + 2 * MAX_GRID as usize + 5;
        let held_none = HELD_OFF;
        let bottom_bun_on_plate = [STATUS_OFF + 4, STATUS_OFF + 4 + 2];
        let patty_raw = STATUS_OFF + 4 * 3;
        let top_bun_raw = STATUS_OFF + 4 * 2;
        let lettuce_raw = STATUS_OFF + 4 * 5;
        let occupied = [OCC_OFF, OCC_OFF + 1, OCC_OFF + 3, OCC_OFF + 4];
        let action = ACTION_OFF + 1;
        let fetch_patty_at_stove = REL_OFF + FETCH_RAW_AT_PROC * Role::COUNT + Role::Cooked.index();
        let mut want = vec![
            start_cell,
            held_none,
            bottom_bun_on_plate[0],
            bottom_bun_on_plate[1],
            patty_raw,
            top_bun_raw,
            lettuce_raw,
            action,
            PRECOND_OFF,
            fetch_patty_at_stove,
        ];
        want.extend(occupied);
        want.sort();
        assert_eq!(ones(&v), want);
        assert_eq!(v.values.len(), FEATURE_DIM);
        assert_eq!(v.schema_version, SCHEMA_VERSION);
    }

    #[test]
    fn featurize_is_deterministic() {
        let mdp = canonical(TaskKind::CheeseBurger);
        let s0 = mdp.initial_state();
        for a in mdp.valid_actions(&s0) {
            assert_eq!(featurize(&s0, a).unwrap(), featurize(&s0, a).unwrap());
        }
    }

    #[test]
    fn cooked_vs_raw_patty_differs_only_in_status() {
        let mdp = canonical(TaskKind::Burger);
        let raw = mdp.decode(&mdp.initial_state());
        let mut cooked = raw.clone();
        cooked.piles[1][0].processed = true;
        let a = KitchenAction::Move(4).id(); // lettuce counter
        let va = featurize(&mdp.encode(&raw), a).unwrap();
        let vb = featurize(&mdp.encode(&cooked), a).unwrap();
        let diff: Vec<usize> = (0..FEATURE_DIM)
            .filter(|&i| va.values[i] != vb.values[i])
            .collect();
        let patty = STATUS_OFF + 4 * ItemKind::Patty.index();
        assert_eq!(diff, vec![patty, patty + 1]);
    }

    #[test]
    fn dimension_is_fixed_across_tasks() {
        for task in TaskKind::ALL {
            let mdp = canonical(task);
            let r = reachable_states(&mdp, &mdp.initial_state(), 3, DEFAULT_STATE_CAP).unwrap();
            for s in r.states() {
                for a in mdp.valid_actions(s) {
                    let v = mdp.featurize(s, a).unwrap();
                    assert_eq!(v.values.len(), FEATURE_DIM);
                    // every valid action fires exactly one relational feature
                    let rel: f64 = v.values[REL_OFF..].iter().sum();
                    assert_eq!(rel, 1.0, "{task} {}", mdp.action_name(a));
                }
            }
        }
    }

    #[test]
    fn non_kitchen_key_is_rejected() {
        let key = StateKey::from_bytes(vec![0u8, 1]);
        assert!(featurize(&key, ActionId(0)).is_err());
    }
}
