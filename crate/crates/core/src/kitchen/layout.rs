use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::state::{ItemKind, StationKind, MAX_GRID, MAX_STATIONS};
use super::TaskKind;
use crate::error::{Error, Result};

pub const LAYOUT_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationSpec {
    pub kind: StationKind,
    pub pos: [u8; 2],
}

/// An item placed on a station. Items listed for the same station form a
/// pile, bottom first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemSpec {
    pub kind: ItemKind,
    pub station: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KitchenLayout {
    pub schema: u32,
    pub grid_size: u8,
    pub stations: Vec<StationSpec>,
    pub items: Vec<ItemSpec>,
    pub agent_start: [u8; 2],
}

impl KitchenLayout {
    pub fn from_json(text: &str) -> Result<Self> {
        let layout: Self = serde_json::from_str(text)?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serializes")
    }

    /// The shipped canonical layout for `task`.
    pub fn canonical(task: TaskKind) -> Self {
        let text = match task {
            TaskKind::CheeseSandwich => include_str!("../../data/layouts/cheese_sandwich.json"),
            TaskKind::Burger => include_str!("../../data/layouts/burger.json"),
            TaskKind::CheeseBurger => include_str!("../../data/layouts/cheese_burger.json"),
            TaskKind::DoubleCheeseBurger => {
                include_str!("../../data/layouts/double_cheese_burger.json")
            }
        };
        Self::from_json(text).expect("shipped layouts are valid")
    }

    /// Structural checks independent of any recipe.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleLayout(m));
        if self.schema != LAYOUT_SCHEMA {
            return bad(format!("unsupported layout schema {}", self.schema));
        }
        if self.grid_size == 0 || self.grid_size > MAX_GRID {
            return bad(format!("grid size must be in 1..={MAX_GRID}"));
        }
        if !(2..=MAX_STATIONS).contains(&self.stations.len()) {
            return bad(format!("need 2..={MAX_STATIONS} stations"));
        }
        let plates = self
            .stations
            .iter()
            .filter(|s| s.kind == StationKind::Plate)
            .count();
        if plates != 1 {
            return bad(format!("need exactly one plate station, found {plates}"));
        }
        let in_grid = |p: [u8; 2]| p[0] < self.grid_size && p[1] < self.grid_size;
        let mut seen = HashSet::new();
        for s in &self.stations {
            if !in_grid(s.pos) {
                return bad(format!("station at {:?} is off the grid", s.pos));
            }
            if !seen.insert(s.pos) {
                return bad(format!("two stations share position {:?}", s.pos));
            }
        }
        if !in_grid(self.agent_start) {
            return bad("agent start is off the grid".into());
        }
        for it in &self.items {
            if it.station >= self.stations.len() {
                return bad(format!("item {} on missing station {}", it.kind.name(), it.station));
            }
        }
        Ok(())
    }

    pub fn count(&self, kind: ItemKind) -> usize {
        self.items.iter().filter(|i| i.kind == kind).count()
    }

    pub fn cell(&self, pos: [u8; 2]) -> u8 {
        pos[1] * self.grid_size + pos[0]
    }
}

/// Held-out style layout: the canonical layout with stations permuted across
/// slots and grid cells, counter contents shuffled and a fresh start cell.
/// The minimal expert length is unchanged.
pub fn sample_layout(task: TaskKind, seed: u64) -> KitchenLayout {
    let base = KitchenLayout::canonical(task);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(task.code() as u64 + 1)));

    // shuffle which counter holds which pile
    let counters: Vec<usize> = (0..base.stations.len())
        .filter(|&i| base.stations[i].kind == StationKind::Counter)
        .collect();
    let mut shuffled = counters.clone();
    shuffled.shuffle(&mut rng);
    let remap_counter = |i: usize| {
        counters
            .iter()
            .position(|&c| c == i)
            .map_or(i, |k| shuffled[k])
    };

    // permute station slots
    let mut order: Vec<usize> = (0..base.stations.len()).collect();
    order.shuffle(&mut rng);
    let new_slot = |old: usize| order.iter().position(|&o| o == old).unwrap();

    let n_cells = (base.grid_size as usize).pow(2);
    let mut cells: Vec<usize> = (0..n_cells).collect();
    cells.shuffle(&mut rng);
    let to_pos = |c: usize| [(c % base.grid_size as usize) as u8, (c / base.grid_size as usize) as u8];

    let stations = order
        .iter()
        .enumerate()
        .map(|(slot, &old)| StationSpec {
            kind: base.stations[old].kind,
            pos: to_pos(cells[slot]),
        })
        .collect();
    let items = base
        .items
        .iter()
        .map(|it| ItemSpec {
            kind: it.kind,
            station: new_slot(remap_counter(it.station)),
        })
        .collect();
    KitchenLayout {
        schema: LAYOUT_SCHEMA,
        grid_size: base.grid_size,
        stations,
        items,
        agent_start: to_pos(cells[base.stations.len()]),
    }
}
