//! Item/station vocabulary, the action vocabulary and the byte encoding of
//! kitchen states.
//!
//! A state key is `header ++ dynamic`, where the header pins the schema
//! version, task and static station layout, and the dynamic part holds the
//! agent location, the held item and every station's pile (bottom to top).
//! Items carry no identity beyond (kind, processed), so two patties are
//! interchangeable and the encoding is canonical by construction.

use serde::{Deserialize, Serialize};

use super::TaskKind;
use crate::env::{ActionId, StateKey};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u8 = 1;
pub const MAX_STATIONS: usize = 8;
pub const MAX_GRID: u8 = 8;
const NONE: u8 = 0xFF;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Bread,
    BottomBun,
    TopBun,
    Patty,
    Cheese,
    Lettuce,
}

impl ItemKind {
    pub const ALL: [ItemKind; 6] = [
        ItemKind::Bread,
        ItemKind::BottomBun,
        ItemKind::TopBun,
        ItemKind::Patty,
        ItemKind::Cheese,
        ItemKind::Lettuce,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ItemKind::Bread => "bread",
            ItemKind::BottomBun => "bottom_bun",
            ItemKind::TopBun => "top_bun",
            ItemKind::Patty => "patty",
            ItemKind::Cheese => "cheese",
            ItemKind::Lettuce => "lettuce",
        }
    }

    /// Station kind that processes this item, if any.
    pub fn processor(self) -> Option<StationKind> {
        match self {
            ItemKind::Patty => Some(StationKind::Stove),
            ItemKind::Cheese | ItemKind::Lettuce => Some(StationKind::Board),
            _ => None,
        }
    }

    pub fn role(self) -> Role {
        match self {
            ItemKind::Bread | ItemKind::BottomBun | ItemKind::TopBun => Role::Base,
            ItemKind::Patty => Role::Cooked,
            ItemKind::Cheese => Role::Cut,
            ItemKind::Lettuce => Role::Other,
        }
    }
}

/// Coarse ingredient role used by the relational features.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Base,
    Cooked,
    Cut,
    Other,
}

impl Role {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }
}

/// An ingredient instance: its kind and whether it has been cooked/cut.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Item {
    pub kind: ItemKind,
    pub processed: bool,
}

impl Item {
    pub const fn raw(kind: ItemKind) -> Self {
        Self {
            kind,
            processed: false,
        }
    }

    pub const fn done(kind: ItemKind) -> Self {
        Self {
            kind,
            processed: true,
        }
    }

    pub fn code(self) -> u8 {
        (self.kind as u8) * 2 + u8::from(self.processed)
    }

    pub fn from_code(code: u8) -> Result<Self> {
        let kind = *ItemKind::ALL
            .get((code / 2) as usize)
            .ok_or_else(|| Error::MalformedState(format!("item code {code}")))?;
        Ok(Self {
            kind,
            processed: code % 2 == 1,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationKind {
    Plate,
    Stove,
    Board,
    Counter,
}

impl StationKind {
    pub const ALL: [StationKind; 4] = [
        StationKind::Plate,
        StationKind::Stove,
        StationKind::Board,
        StationKind::Counter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StationKind::Plate => "plate",
            StationKind::Stove => "stove",
            StationKind::Board => "board",
            StationKind::Counter => "counter",
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        StationKind::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::MalformedState(format!("station code {code}")))
    }
}

/// Decoded form of the global 24-action vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KitchenAction {
    Move(u8),
    Pick(ItemKind),
    Place(ItemKind),
    Cook,
    Cut,
    Stack,
    Plate,
}

pub const NUM_ACTIONS: usize = MAX_STATIONS + 6 + 6 + 4;
const PICK_BASE: u16 = MAX_STATIONS as u16;
const PLACE_BASE: u16 = PICK_BASE + 6;
const COOK: u16 = PLACE_BASE + 6;

impl KitchenAction {
    pub fn id(self) -> ActionId {
        ActionId(match self {
            KitchenAction::Move(i) => i as u16,
            KitchenAction::Pick(k) => PICK_BASE + k as u16,
            KitchenAction::Place(k) => PLACE_BASE + k as u16,
            KitchenAction::Cook => COOK,
            KitchenAction::Cut => COOK + 1,
            KitchenAction::Stack => COOK + 2,
            KitchenAction::Plate => COOK + 3,
        })
    }

    pub fn from_id(a: ActionId) -> Option<Self> {
        let id = a.0;
        Some(match id {
            _ if id < PICK_BASE => KitchenAction::Move(id as u8),
            _ if id < PLACE_BASE => KitchenAction::Pick(ItemKind::ALL[(id - PICK_BASE) as usize]),
            _ if id < COOK => KitchenAction::Place(ItemKind::ALL[(id - PLACE_BASE) as usize]),
            _ if id == COOK => KitchenAction::Cook,
            _ if id == COOK + 1 => KitchenAction::Cut,
            _ if id == COOK + 2 => KitchenAction::Stack,
            _ if id == COOK + 3 => KitchenAction::Plate,
            _ => return None,
        })
    }
}

/// Static part of a state key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Header {
    pub task: TaskKind,
    pub grid_size: u8,
    pub stations: Vec<(StationKind, u8)>,
    pub agent_start: u8,
}

impl Header {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![
            SCHEMA_VERSION,
            self.task.code(),
            self.grid_size,
            self.stations.len() as u8,
        ];
        out.extend(self.stations.iter().map(|(k, _)| *k as u8));
        out.extend(self.stations.iter().map(|(_, p)| *p));
        out.push(self.agent_start);
        out
    }

    pub fn encoded_len(&self) -> usize {
        5 + 2 * self.stations.len()
    }

    pub fn plate_station(&self) -> usize {
        self.stations
            .iter()
            .position(|(k, _)| *k == StationKind::Plate)
            .expect("validated layouts have a plate station")
    }
}

/// Dynamic part of a state.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct KitchenState {
    /// Station index, or `None` while on the start cell.
    pub agent: Option<u8>,
    pub held: Option<Item>,
    pub piles: Vec<Vec<Item>>,
}

impl KitchenState {
    pub fn encode_with(&self, header: &[u8]) -> StateKey {
        let mut out = Vec::with_capacity(header.len() + 2 + self.piles.len() * 3);
        out.extend_from_slice(header);
        out.push(self.agent.unwrap_or(NONE));
        out.push(self.held.map_or(NONE, Item::code));
        for pile in &self.piles {
            out.push(pile.len() as u8);
            out.extend(pile.iter().map(|it| it.code()));
        }
        StateKey::from_bytes(out)
    }

    /// Decodes the dynamic part given the header length and station count.
    pub fn decode_dynamic(bytes: &[u8], n_stations: usize) -> Result<Self> {
        let bad = || Error::MalformedState(hex::encode(bytes));
        let agent = match *bytes.first().ok_or_else(bad)? {
            NONE => None,
            i if (i as usize) < n_stations => Some(i),
            _ => return Err(bad()),
        };
        let held = match *bytes.get(1).ok_or_else(bad)? {
            NONE => None,
            c => Some(Item::from_code(c)?),
        };
        let mut piles = Vec::with_capacity(n_stations);
        let mut pos = 2;
        for _ in 0..n_stations {
            let len = *bytes.get(pos).ok_or_else(bad)? as usize;
            pos += 1;
            let codes = bytes.get(pos..pos + len).ok_or_else(bad)?;
            piles.push(codes.iter().map(|&c| Item::from_code(c)).collect::<Result<Vec<_>>>()?);
            pos += len;
        }
        if pos != bytes.len() {
            return Err(bad());
        }
        Ok(Self { agent, held, piles })
    }
}

/// Decodes a full kitchen state key.
pub fn decode_key(key: &StateKey) -> Result<(Header, KitchenState)> {
    let b = key.as_bytes();
    let bad = || Error::MalformedState(key.to_hex());
    let version = *b.first().ok_or_else(bad)?;
    if version != SCHEMA_VERSION {
        return Err(Error::SchemaMismatch {
            expected: SCHEMA_VERSION,
            found: version,
        });
    }
    if b.len() < 4 {
        return Err(bad());
    }
    let task = TaskKind::from_code(b[1]).ok_or_else(bad)?;
    let grid_size = b[2];
    let n = b[3] as usize;
    if n == 0 || n > MAX_STATIONS || b.len() < 5 + 2 * n {
        return Err(bad());
    }
    let stations = (0..n)
        .map(|i| Ok((StationKind::from_code(b[4 + i])?, b[4 + n + i])))
        .collect::<Result<Vec<_>>>()?;
    let header = Header {
        task,
        grid_size,
        stations,
        agent_start: b[4 + 2 * n],
    };
    let dynamic = KitchenState::decode_dynamic(&b[header.encoded_len()..], n)?;
    Ok((header, dynamic))
}
