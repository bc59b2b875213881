//! A small grid-station cooking domain with four recipe tiers.
//!
//! The agent moves between stations, carries one item at a time, cooks
//! patties on the stove, cuts cheese on the board and assembles the recipe
//! bottom-up on the plate station. Serving (`plate`) a pile that matches the
//! recipe completes the task; serving anything else throws the pile away.

mod features;
mod layout;
mod state;
mod subtask;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{ActionId, FeatureVector, StateKey, TaskMdp, Transition, DEFAULT_STATE_CAP};
use crate::error::{Error, Result};
use crate::expert::plan_optimal;

pub use features::{featurize, FEATURE_DIM};
pub use layout::{sample_layout, ItemSpec, KitchenLayout, StationSpec, LAYOUT_SCHEMA};
pub use state::{
    decode_key, Header, Item, ItemKind, KitchenAction, KitchenState, Role, StationKind,
    MAX_STATIONS, NUM_ACTIONS, SCHEMA_VERSION,
};
pub use subtask::{make_subtask, SubtaskMdp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    CheeseSandwich,
    Burger,
    CheeseBurger,
    DoubleCheeseBurger,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::CheeseSandwich,
        TaskKind::Burger,
        TaskKind::CheeseBurger,
        TaskKind::DoubleCheeseBurger,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::CheeseSandwich => "cheese_sandwich",
            TaskKind::Burger => "burger",
            TaskKind::CheeseBurger => "cheese_burger",
            TaskKind::DoubleCheeseBurger => "double_cheese_burger",
        }
    }

    /// Evaluation timeout in turns.
    pub fn timeout(self) -> usize {
        match self {
            TaskKind::CheeseSandwich | TaskKind::Burger => 15,
            TaskKind::CheeseBurger => 23,
            TaskKind::DoubleCheeseBurger => 35,
        }
    }

    /// Upper bound on the minimal expert length (actions) on canonical layouts.
    pub fn expert_bound(self) -> usize {
        match self {
            TaskKind::CheeseSandwich | TaskKind::Burger => 10,
            TaskKind::CheeseBurger => 15,
            TaskKind::DoubleCheeseBurger => 23,
        }
    }

    /// Required plate pile, bottom first.
    pub fn recipe(self) -> Vec<Item> {
        use ItemKind::*;
        let patty = Item::done(Patty);
        let cheese = Item::done(Cheese);
        match self {
            TaskKind::CheeseSandwich => vec![Item::raw(Bread), cheese, Item::raw(Bread)],
            TaskKind::Burger => vec![Item::raw(BottomBun), patty, Item::raw(TopBun)],
            TaskKind::CheeseBurger => {
                vec![Item::raw(BottomBun), patty, cheese, Item::raw(TopBun)]
            }
            TaskKind::DoubleCheeseBurger => vec![
                Item::raw(BottomBun),
                patty,
                cheese,
                patty,
                cheese,
                Item::raw(TopBun),
            ],
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|t| t.name().replace('_', "") == norm)
            .ok_or_else(|| Error::Config(format!("unknown task `{s}`")))
    }
}

/// A cooking task on a concrete layout.
#[derive(Clone, Debug)]
pub struct KitchenMdp {
    task: TaskKind,
    header: Header,
    header_bytes: Vec<u8>,
    recipe: Vec<Item>,
    initial: StateKey,
    horizon: usize,
}

/// Builds the task MDP and probes that its goal is reachable.
pub fn build_task(kind: TaskKind, layout: &KitchenLayout) -> Result<KitchenMdp> {
    let mdp = KitchenMdp::new(kind, layout)?;
    match plan_optimal(&mdp, &mdp.initial_state(), DEFAULT_STATE_CAP) {
        Ok(_) => Ok(mdp),
        Err(Error::GoalUnreachable(_)) => Err(Error::InfeasibleLayout(format!(
            "{kind} goal is unreachable on this layout"
        ))),
        Err(e) => Err(e),
    }
}

impl KitchenMdp {
    /// Builds the MDP after structural and ingredient checks, without the
    /// planner probe.
    pub fn new(kind: TaskKind, layout: &KitchenLayout) -> Result<Self> {
        layout.validate()?;
        let recipe = kind.recipe();
        for k in ItemKind::ALL {
            let need = recipe.iter().filter(|i| i.kind == k).count();
            let have = layout.count(k);
            if need > 0 && have != need {
                return Err(Error::InfeasibleLayout(format!(
                    "{kind} needs {need} {} but the layout has {have}",
                    k.name()
                )));
            }
            if need > 0 {
                if let Some(proc) = k.processor() {
                    let needs_processing = recipe.iter().any(|i| i.kind == k && i.processed);
                    if needs_processing && !layout.stations.iter().any(|s| s.kind == proc) {
                        return Err(Error::InfeasibleLayout(format!(
                            "{} needs a {} station",
                            k.name(),
                            proc.name()
                        )));
                    }
                }
            }
        }
        let header = Header {
            task: kind,
            grid_size: layout.grid_size,
            stations: layout
                .stations
                .iter()
                .map(|s| (s.kind, layout.cell(s.pos)))
                .collect(),
            agent_start: layout.cell(layout.agent_start),
        };
        let mut piles = vec![Vec::new(); layout.stations.len()];
        for it in &layout.items {
            piles[it.station].push(Item::raw(it.kind));
        }
        let agent = layout
            .stations
            .iter()
            .position(|s| s.pos == layout.agent_start)
            .map(|i| i as u8);
        let header_bytes = header.encode();
        let initial = KitchenState {
            agent,
            held: None,
            piles,
        }
        .encode_with(&header_bytes);
        Ok(Self {
            task: kind,
            header,
            header_bytes,
            recipe,
            initial,
            horizon: kind.timeout(),
        })
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    pub fn recipe(&self) -> &[Item] {
        &self.recipe
    }

    pub fn decode(&self, s: &StateKey) -> KitchenState {
        KitchenState::decode_dynamic(
            &s.as_bytes()[self.header_bytes.len()..],
            self.header.stations.len(),
        )
        .expect("state key belongs to this kitchen")
    }

    pub fn encode(&self, st: &KitchenState) -> StateKey {
        st.encode_with(&self.header_bytes)
    }

    fn station_kind(&self, i: u8) -> StationKind {
        self.header.stations[i as usize].0
    }

    fn actions_of(&self, st: &KitchenState) -> Vec<KitchenAction> {
        legal_actions(&self.header, st)
    }

    fn apply(&self, st: &KitchenState, a: KitchenAction) -> KitchenState {
        let mut next = st.clone();
        let here = st.agent.map(|i| i as usize);
        match a {
            KitchenAction::Move(i) => next.agent = Some(i),
            KitchenAction::Pick(_) => {
                next.held = next.piles[here.unwrap()].pop();
            }
            KitchenAction::Place(_) | KitchenAction::Stack => {
                let item = next.held.take().unwrap();
                next.piles[here.unwrap()].push(item);
            }
            KitchenAction::Cook => {
                for it in &mut next.piles[here.unwrap()] {
                    if it.kind == ItemKind::Patty {
                        it.processed = true;
                    }
                }
            }
            KitchenAction::Cut => {
                for it in &mut next.piles[here.unwrap()] {
                    if it.kind.processor() == Some(StationKind::Board) {
                        it.processed = true;
                    }
                }
            }
            KitchenAction::Plate => next.piles[here.unwrap()].clear(),
        }
        next
    }

    fn completes_decoded(&self, st: &KitchenState, a: KitchenAction) -> bool {
        a == KitchenAction::Plate
            && st.agent.is_some_and(|i| st.piles[i as usize] == self.recipe)
    }
}

impl TaskMdp for KitchenMdp {
    fn initial_state(&self) -> StateKey {
        self.initial.clone()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn valid_actions(&self, s: &StateKey) -> Vec<ActionId> {
        self.actions_of(&self.decode(s))
            .into_iter()
            .map(KitchenAction::id)
            .collect()
    }

    fn next_state(&self, s: &StateKey, a: ActionId) -> StateKey {
        let st = self.decode(s);
        let a = KitchenAction::from_id(a).expect("valid kitchen action");
        self.encode(&self.apply(&st, a))
    }

    fn completes(&self, s: &StateKey, a: ActionId) -> bool {
        match KitchenAction::from_id(a) {
            Some(a) => self.completes_decoded(&self.decode(s), a),
            None => false,
        }
    }

    fn expand(&self, s: &StateKey) -> Vec<Transition> {
        let st = self.decode(s);
        self.actions_of(&st)
            .into_iter()
            .map(|a| Transition {
                action: a.id(),
                next: self.encode(&self.apply(&st, a)),
                completes: self.completes_decoded(&st, a),
            })
            .collect()
    }

    fn action_name(&self, a: ActionId) -> String {
        match KitchenAction::from_id(a) {
            Some(KitchenAction::Move(i)) if (i as usize) < self.header.stations.len() => {
                format!("move({}#{i})", self.station_kind(i).name())
            }
            Some(KitchenAction::Move(i)) => format!("move(#{i})"),
            Some(KitchenAction::Pick(k)) => format!("pick({})", k.name()),
            Some(KitchenAction::Place(k)) => format!("place({})", k.name()),
            Some(KitchenAction::Cook) => "cook".into(),
            Some(KitchenAction::Cut) => "cut".into(),
            Some(KitchenAction::Stack) => "stack".into(),
            Some(KitchenAction::Plate) => "plate".into(),
            None => format!("a{}", a.0),
        }
    }

    fn featurize(&self, s: &StateKey, a: ActionId) -> Result<FeatureVector> {
        featurize(s, a)
    }
}

/// Valid actions of a decoded state, in ascending id order.
pub(crate) fn legal_actions(header: &Header, st: &KitchenState) -> Vec<KitchenAction> {
    let mut out: Vec<KitchenAction> = (0..header.stations.len() as u8)
        .filter(|&i| st.agent != Some(i))
        .map(KitchenAction::Move)
        .collect();
    let Some(here) = st.agent else {
        return out;
    };
    let pile = &st.piles[here as usize];
    let kind = header.stations[here as usize].0;
    match (st.held, pile.last()) {
        (None, Some(top)) => out.push(KitchenAction::Pick(top.kind)),
        (Some(h), None) => out.push(KitchenAction::Place(h.kind)),
        _ => {}
    }
    if kind == StationKind::Stove && pile.iter().any(|i| i.kind == ItemKind::Patty && !i.processed)
    {
        out.push(KitchenAction::Cook);
    }
    if kind == StationKind::Board
        && pile
            .iter()
            .any(|i| i.kind.processor() == Some(StationKind::Board) && !i.processed)
    {
        out.push(KitchenAction::Cut);
    }
    if kind == StationKind::Plate && !pile.is_empty() {
        if st.held.is_some() {
            out.push(KitchenAction::Stack);
        } else {
            out.push(KitchenAction::Plate);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{is_success, step};

    fn canonical(kind: TaskKind) -> KitchenMdp {
        build_task(kind, &KitchenLayout::canonical(kind)).unwrap()
    }

    #[test]
    fn task_names_parse() {
        for t in TaskKind::ALL {
            assert_eq!(t.name().parse::<TaskKind>().unwrap(), t);
        }
        assert_eq!("DoubleCheeseBurger".parse::<TaskKind>().unwrap(), TaskKind::DoubleCheeseBurger);
        assert_eq!("cheese-sandwich".parse::<TaskKind>().unwrap(), TaskKind::CheeseSandwich);
        assert!("pizza".parse::<TaskKind>().is_err());
    }

    #[test]
    fn pick_only_changes_the_hand() {
        let mdp = canonical(TaskKind::Burger);
        let s0 = mdp.initial_state();
        let counter = 3u8; // holds the top bun
        let at = step(&mdp, &s0, KitchenAction::Move(counter).id()).unwrap();
        let picked = step(&mdp, &at, KitchenAction::Pick(ItemKind::TopBun).id()).unwrap();
        let before = mdp.decode(&at);
        let after = mdp.decode(&picked);
        assert_eq!(after.held, Some(Item::raw(ItemKind::TopBun)));
        assert_eq!(after.agent, before.agent);
        let mut expect = before.piles.clone();
        expect[counter as usize].pop();
        assert_eq!(after.piles, expect);
    }

    #[test]
    fn plating_the_finished_sandwich_completes() {
        let mdp = canonical(TaskKind::CheeseSandwich);
        let plate = mdp.header().plate_station();
        let st = KitchenState {
            agent: Some(plate as u8),
            held: None,
            piles: {
                let mut p = vec![Vec::new(); mdp.header().stations.len()];
                p[plate] = mdp.recipe().to_vec();
                p
            },
        };
        let s = mdp.encode(&st);
        assert_eq!(is_success(&mdp, &s, KitchenAction::Plate.id()).unwrap(), 1);
        assert_eq!(is_success(&mdp, &s, KitchenAction::Move(1).id()).unwrap(), 0);
    }

    #[test]
    fn plating_a_wrong_pile_discards_it() {
        let mdp = canonical(TaskKind::Burger);
        let s0 = mdp.initial_state();
        let s = step(&mdp, &s0, KitchenAction::Move(0).id()).unwrap();
        assert_eq!(is_success(&mdp, &s, KitchenAction::Plate.id()).unwrap(), 0);
        let after = mdp.decode(&step(&mdp, &s, KitchenAction::Plate.id()).unwrap());
        assert!(after.piles[0].is_empty());
    }

    #[test]
    fn missing_patty_is_infeasible() {
        let mut layout = KitchenLayout::canonical(TaskKind::Burger);
        layout.items.retain(|i| i.kind != ItemKind::Patty);
        assert!(matches!(
            build_task(TaskKind::Burger, &layout),
            Err(Error::InfeasibleLayout(_))
        ));
    }

    #[test]
    fn missing_stove_is_infeasible() {
        let mut layout = KitchenLayout::canonical(TaskKind::Burger);
        for s in &mut layout.stations {
            if s.kind == StationKind::Stove {
                s.kind = StationKind::Counter;
            }
        }
        assert!(matches!(
            build_task(TaskKind::Burger, &layout),
            Err(Error::InfeasibleLayout(_))
        ));
    }

    #[test]
    fn valid_actions_are_sorted_and_nonempty() {
        let mdp = canonical(TaskKind::DoubleCheeseBurger);
        let r = crate::env::reachable_states(&mdp, &mdp.initial_state(), 6, DEFAULT_STATE_CAP)
            .unwrap();
        for s in r.states() {
            let v = mdp.valid_actions(s);
            assert!(!v.is_empty());
            assert!(v.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
