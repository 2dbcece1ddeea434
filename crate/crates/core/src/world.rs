//! Bounded voxel world shared by every other module.
//!
//! The grid spans `x, z ∈ [-5, 5]` and `y ∈ [0, 8]`. North is `-z`, east is
//! `+x` and `y` grows upwards from the ground at `y = 0`. A [`WorldState`] is
//! a plain value: mutating operations return a new snapshot together with the
//! [`WorldDiff`] that produced it.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const X_MIN: i32 = -5;
pub const X_MAX: i32 = 5;
pub const Y_MIN: i32 = 0;
pub const Y_MAX: i32 = 8;
pub const Z_MIN: i32 = -5;
pub const Z_MAX: i32 = 5;

/// Number of cells in the grid (11 × 9 × 11).
pub const CELL_COUNT: usize =
    ((X_MAX - X_MIN + 1) * (Y_MAX - Y_MIN + 1) * (Z_MAX - Z_MIN + 1)) as usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorldError {
    #[error("coordinate ({x}, {y}, {z}) is outside the grid")]
    OutOfBounds { x: i64, y: i64, z: i64 },
    #[error("unknown color `{0}`")]
    InvalidColor(String),
    #[error("unknown direction `{0}`")]
    UnknownDirection(String),
    #[error("malformed block list: {0}")]
    MalformedBlocks(String),
    #[error("duplicate block at {0}")]
    DuplicateBlock(Coord),
    #[error("diff does not apply: {0}")]
    DiffMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Color {
    Blue,
    Yellow,
    Green,
    Orange,
    Purple,
    Red,
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Blue,
        Color::Yellow,
        Color::Green,
        Color::Orange,
        Color::Purple,
        Color::Red,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Green => "green",
            Color::Orange => "orange",
            Color::Purple => "purple",
            Color::Red => "red",
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Color {
    type Err = WorldError;

    /// Case-insensitive; surrounding whitespace is ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let name = s.trim();
        Color::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(name))
            .ok_or_else(|| WorldError::InvalidColor(s.to_string()))
    }
}

impl Serialize for Color {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Color {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A grid cell. Construction is checked, so every `Coord` is in bounds.
///
/// Ordering is `(y, z, x)`, which is the canonical serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Coord {
    x: i32,
    y: i32,
    z: i32,
}

impl Coord {
    pub const ORIGIN: Coord = Coord { x: 0, y: 0, z: 0 };

    pub fn new(x: i64, y: i64, z: i64) -> Result<Self, WorldError> {
        let in_range = |v: i64, lo: i32, hi: i32| v >= i64::from(lo) && v <= i64::from(hi);
        if in_range(x, X_MIN, X_MAX) && in_range(y, Y_MIN, Y_MAX) && in_range(z, Z_MIN, Z_MAX) {
            Ok(Coord {
                x: x as i32,
                y: y as i32,
                z: z as i32,
            })
        } else {
            Err(WorldError::OutOfBounds { x, y, z })
        }
    }

    pub fn x(self) -> i32 {
        self.x
    }

    pub fn y(self) -> i32 {
        self.y
    }

    pub fn z(self) -> i32 {
        self.z
    }

    pub fn offset(self, (dx, dy, dz): (i32, i32, i32)) -> Result<Self, WorldError> {
        Coord::new(
            i64::from(self.x) + i64::from(dx),
            i64::from(self.y) + i64::from(dy),
            i64::from(self.z) + i64::from(dz),
        )
    }

    /// Iterates over every cell of the grid in canonical order.
    pub fn all() -> impl Iterator<Item = Coord> {
        (Y_MIN..=Y_MAX).flat_map(|y| {
            (Z_MIN..=Z_MAX).flat_map(move |z| (X_MIN..=X_MAX).map(move |x| Coord { x, y, z }))
        })
    }
}

impl Ord for Coord {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.y, self.z, self.x).cmp(&(other.y, other.z, other.x))
    }
}

impl PartialOrd for Coord {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Block {
    pub pos: Coord,
    pub color: Color,
}

impl Block {
    pub fn new(pos: Coord, color: Color) -> Self {
        Block { pos, color }
    }

    /// Checked constructor from raw coordinates.
    pub fn at(x: i64, y: i64, z: i64, color: Color) -> Result<Self, WorldError> {
        Ok(Block {
            pos: Coord::new(x, y, z)?,
            color,
        })
    }
}

/// `[x, y, z, "color"]` on the wire.
impl Serialize for Block {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        (self.pos.x, self.pos.y, self.pos.z, self.color).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Block {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let (x, y, z, color) = <(i64, i64, i64, Color)>::deserialize(deserializer)?;
        Block::at(x, y, z, color).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    North,
    South,
    East,
    West,
    Up,
    Down,
}

impl Direction {
    pub fn delta(self) -> (i32, i32, i32) {
        match self {
            Direction::North => (0, 0, -1),
            Direction::South => (0, 0, 1),
            Direction::East => (1, 0, 0),
            Direction::West => (-1, 0, 0),
            Direction::Up => (0, 1, 0),
            Direction::Down => (0, -1, 0),
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::North => Direction::South,
            Direction::South => Direction::North,
            Direction::East => Direction::West,
            Direction::West => Direction::East,
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
        }
    }
}

impl FromStr for Direction {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "north" => Ok(Direction::North),
            "south" => Ok(Direction::South),
            "east" => Ok(Direction::East),
            "west" => Ok(Direction::West),
            "up" => Ok(Direction::Up),
            "down" => Ok(Direction::Down),
            _ => Err(WorldError::UnknownDirection(s.to_string())),
        }
    }
}

/// Parses a direction name and returns its unit offset.
pub fn direction_delta(direction: &str) -> Result<(i32, i32, i32), WorldError> {
    direction.parse::<Direction>().map(Direction::delta)
}

/// Net change between two world snapshots.
///
/// A same-cell color change shows up as one `removed` entry (old color) and
/// one `added` entry (new color) at the same coordinate.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorldDiff {
    pub added: BTreeSet<Block>,
    pub removed: BTreeSet<Block>,
}

impl WorldDiff {
    pub fn between(before: &WorldState, after: &WorldState) -> Self {
        let before_blocks: BTreeSet<Block> = before.blocks().collect();
        let after_blocks: BTreeSet<Block> = after.blocks().collect();
        WorldDiff {
            added: after_blocks.difference(&before_blocks).copied().collect(),
            removed: before_blocks.difference(&after_blocks).copied().collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }

    pub fn len(&self) -> usize {
        self.added.len() + self.removed.len()
    }

    pub fn inverse(&self) -> Self {
        WorldDiff {
            added: self.removed.clone(),
            removed: self.added.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct WorldState {
    blocks: BTreeMap<Coord, Color>,
}

impl WorldState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a world from blocks; a repeated coordinate is an error.
    pub fn from_blocks<I: IntoIterator<Item = Block>>(blocks: I) -> Result<Self, WorldError> {
        let mut map = BTreeMap::new();
        for block in blocks {
            if map.insert(block.pos, block.color).is_some() {
                return Err(WorldError::DuplicateBlock(block.pos));
            }
        }
        Ok(WorldState { blocks: map })
    }

    pub fn get(&self, pos: Coord) -> Option<Color> {
        self.blocks.get(&pos).copied()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Blocks in canonical `(y, z, x)` order.
    pub fn blocks(&self) -> impl Iterator<Item = Block> + '_ {
        self.blocks.iter().map(|(&pos, &color)| Block { pos, color })
    }

    /// Places `block`, replacing any block already in that cell.
    pub fn apply_add(&self, block: Block) -> (WorldState, WorldDiff) {
        let mut next = self.clone();
        let diff = next.add_in_place(block);
        (next, diff)
    }

    /// Empties `pos`; removing an empty cell yields an empty diff.
    pub fn apply_remove(&self, pos: Coord) -> (WorldState, WorldDiff) {
        let mut next = self.clone();
        let diff = next.remove_in_place(pos);
        (next, diff)
    }

    pub(crate) fn add_in_place(&mut self, block: Block) -> WorldDiff {
        let mut diff = WorldDiff::default();
        match self.blocks.insert(block.pos, block.color) {
            Some(prior) if prior == block.color => {}
            Some(prior) => {
                diff.removed.insert(Block::new(block.pos, prior));
                diff.added.insert(block);
            }
            None => {
                diff.added.insert(block);
            }
        }
        diff
    }

    pub(crate) fn remove_in_place(&mut self, pos: Coord) -> WorldDiff {
        let mut diff = WorldDiff::default();
        if let Some(prior) = self.blocks.remove(&pos) {
            diff.removed.insert(Block::new(pos, prior));
        }
        diff
    }

    /// Applies a diff strictly: every removed block must be present with the
    /// recorded color, and every added cell must be empty once removals ran.
    pub fn apply_diff(&self, diff: &WorldDiff) -> Result<WorldState, WorldError> {
        let mut next = self.clone();
        for block in &diff.removed {
            match next.blocks.remove(&block.pos) {
                Some(color) if color == block.color => {}
                Some(color) => {
                    return Err(WorldError::DiffMismatch(format!(
                        "expected {} at {}, found {}",
                        block.color, block.pos, color
                    )))
                }
                None => {
                    return Err(WorldError::DiffMismatch(format!(
                        "expected {} at {}, cell is empty",
                        block.color, block.pos
                    )))
                }
            }
        }
        for block in &diff.added {
            if let Some(color) = next.blocks.insert(block.pos, block.color) {
                return Err(WorldError::DiffMismatch(format!(
                    "cannot add {} at {}, cell holds {}",
                    block.color, block.pos, color
                )));
            }
        }
        Ok(next)
    }

    /// Size of the symmetric difference of the two block sets. A cell with
    /// the wrong color counts twice.
    pub fn distance(&self, other: &WorldState) -> usize {
        WorldDiff::between(self, other).len()
    }
}

impl FromIterator<Block> for WorldState {
    /// Later blocks win on repeated coordinates.
    fn from_iter<I: IntoIterator<Item = Block>>(iter: I) -> Self {
        WorldState {
            blocks: iter.into_iter().map(|b| (b.pos, b.color)).collect(),
        }
    }
}

impl Serialize for WorldState {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.blocks())
    }
}

impl<'de> Deserialize<'de> for WorldState {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let blocks = Vec::<Block>::deserialize(deserializer)?;
        WorldState::from_blocks(blocks).map_err(serde::de::Error::custom)
    }
}

/// True iff both worlds hold exactly the same colored cells.
pub fn equals_target(world: &WorldState, target: &WorldState) -> bool {
    world == target
}

/// Canonical block-list text: `[[x,y,z,"color"],...]` sorted by `y`, `z`, `x`.
pub fn serialize_blocks(world: &WorldState) -> String {
    serde_json::to_string(world).expect("block lists always serialize")
}

pub fn parse_blocks(text: &str) -> Result<WorldState, WorldError> {
    let raw: Vec<(i64, i64, i64, String)> =
        serde_json::from_str(text).map_err(|e| WorldError::MalformedBlocks(e.to_string()))?;
    let mut blocks = Vec::with_capacity(raw.len());
    for (x, y, z, color) in raw {
        blocks.push(Block::at(x, y, z, color.parse()?)?);
    }
    WorldState::from_blocks(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(x: i64, y: i64, z: i64, color: Color) -> Block {
        Block::at(x, y, z, color).unwrap()
    }

    #[test]
    fn add_to_empty_world() {
        let (world, diff) = WorldState::new().apply_add(block(0, 0, 0, Color::Red));
        assert_eq!(world.get(Coord::ORIGIN), Some(Color::Red));
        assert_eq!(diff.added.len(), 1);
        assert!(diff.removed.is_empty());
    }

    #[test]
    fn add_on_occupied_cell_replaces() {
        let blue = WorldState::from_blocks([block(0, 0, 0, Color::Blue)]).unwrap();
        let (world, diff) = blue.apply_add(block(0, 0, 0, Color::Red));
        assert_eq!(world.get(Coord::ORIGIN), Some(Color::Red));
        assert_eq!(world.len(), 1);
        assert_eq!(
            diff.removed.into_iter().collect::<Vec<_>>(),
            vec![block(0, 0, 0, Color::Blue)]
        );
        assert_eq!(
            diff.added.into_iter().collect::<Vec<_>>(),
            vec![block(0, 0, 0, Color::Red)]
        );
    }

    #[test]
    fn same_color_add_is_a_noop() {
        let red = WorldState::from_blocks([block(0, 0, 0, Color::Red)]).unwrap();
        let (world, diff) = red.apply_add(block(0, 0, 0, Color::Red));
        assert_eq!(world, red);
        assert!(diff.is_empty());
    }

    #[test]
    fn out_of_bounds_coordinates_are_rejected() {
        assert!(matches!(
            Block::at(6, 0, 0, Color::Red),
            Err(WorldError::OutOfBounds { x: 6, .. })
        ));
        assert!(matches!(
            Coord::new(9, 9, 9),
            Err(WorldError::OutOfBounds { .. })
        ));
        assert!(Coord::new(0, -1, 0).is_err());
        assert!(Coord::new(0, 9, 0).is_err());
        assert!(Coord::new(-5, 8, 5).is_ok());
    }

    #[test]
    fn remove_then_remove_empty() {
        let red = WorldState::from_blocks([block(0, 0, 0, Color::Red)]).unwrap();
        let (world, diff) = red.apply_remove(Coord::ORIGIN);
        assert!(world.is_empty());
        assert_eq!(diff.removed.len(), 1);

        let (world, diff) = world.apply_remove(Coord::ORIGIN);
        assert!(world.is_empty());
        assert!(diff.is_empty());
    }

    #[test]
    fn serialization_examples() {
        assert_eq!(serialize_blocks(&WorldState::new()), "[]");
        let world = WorldState::from_blocks([
            block(0, 1, 0, Color::Yellow),
            block(0, 0, 0, Color::Red),
        ])
        .unwrap();
        assert_eq!(
            serialize_blocks(&world),
            r#"[[0,0,0,"red"],[0,1,0,"yellow"]]"#
        );
    }

    #[test]
    fn canonical_order_is_y_then_z_then_x() {
        let world = WorldState::from_blocks([
            block(1, 0, -1, Color::Blue),
            block(-1, 0, -1, Color::Blue),
            block(0, 1, -5, Color::Blue),
            block(0, 0, 2, Color::Blue),
        ])
        .unwrap();
        assert_eq!(
            serialize_blocks(&world),
            r#"[[-1,0,-1,"blue"],[1,0,-1,"blue"],[0,0,2,"blue"],[0,1,-5,"blue"]]"#
        );
    }

    #[test]
    fn parse_rejects_bad_input() {
        assert!(matches!(
            parse_blocks(r#"[[0,0,0,"stone"]]"#),
            Err(WorldError::InvalidColor(_))
        ));
        assert!(matches!(
            parse_blocks(r#"[[0,0,0,"red"],[0,0,0,"blue"]]"#),
            Err(WorldError::DuplicateBlock(_))
        ));
        assert!(matches!(
            parse_blocks(r#"[[12,0,0,"red"]]"#),
            Err(WorldError::OutOfBounds { .. })
        ));
        assert!(matches!(
            parse_blocks("not json"),
            Err(WorldError::MalformedBlocks(_))
        ));
        assert_eq!(parse_blocks(r#"[[0,0,0,"RED"]]"#).unwrap().len(), 1);
    }

    #[test]
    fn colors_parse_case_insensitively_and_only_six_exist() {
        assert_eq!("Purple".parse::<Color>().unwrap(), Color::Purple);
        assert_eq!(" red ".parse::<Color>().unwrap(), Color::Red);
        assert!("stone".parse::<Color>().is_err());
        assert!("".parse::<Color>().is_err());
        assert_eq!(Color::ALL.len(), 6);
    }

    #[test]
    fn direction_deltas() {
        assert_eq!(direction_delta("north").unwrap(), (0, 0, -1));
        assert_eq!(direction_delta("south").unwrap(), (0, 0, 1));
        assert_eq!(direction_delta("east").unwrap(), (1, 0, 0));
        assert_eq!(direction_delta("west").unwrap(), (-1, 0, 0));
        assert_eq!(direction_delta("up").unwrap(), (0, 1, 0));
        assert_eq!(direction_delta("down").unwrap(), (0, -1, 0));
        assert!(matches!(
            direction_delta("northeast"),
            Err(WorldError::UnknownDirection(_))
        ));
    }

    #[test]
    fn north_then_south_returns_home() {
        let start = Coord::new(2, 3, 0).unwrap();
        let there = start.offset(Direction::North.delta()).unwrap();
        let back = there.offset(Direction::South.delta()).unwrap();
        assert_eq!(back, start);
    }

    #[test]
    fn equality_is_color_sensitive() {
        let red = WorldState::from_blocks([block(0, 0, 0, Color::Red)]).unwrap();
        let blue = WorldState::from_blocks([block(0, 0, 0, Color::Blue)]).unwrap();
        assert!(equals_target(&red, &red));
        assert!(!equals_target(&red, &blue));
        assert_eq!(red.distance(&blue), 2);
    }

    #[test]
    fn strict_diff_application() {
        let red = WorldState::from_blocks([block(0, 0, 0, Color::Red)]).unwrap();
        let mut wrong = WorldDiff::default();
        wrong.removed.insert(block(0, 0, 0, Color::Blue));
        assert!(matches!(
            red.apply_diff(&wrong),
            Err(WorldError::DiffMismatch(_))
        ));

        let mut clash = WorldDiff::default();
        clash.added.insert(block(0, 0, 0, Color::Green));
        assert!(red.apply_diff(&clash).is_err());
    }

    #[test]
    fn cell_count_matches_grid() {
        assert_eq!(CELL_COUNT, 11 * 9 * 11);
        assert_eq!(Coord::all().count(), CELL_COUNT);
    }
}
