//! Weighted-block pushing on a square grid.
//!
//! Objects are addressed by weight rank: action rank 0 always moves the
//! heaviest block in the episode. A block can push a strictly lighter
//! neighbour one cell further, provided that cell is on the grid and free.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{NUM_SHAPES, PALETTE};

/// Observed-setting intensities live on a lattice of `level / INTENSITY_LEVELS`.
pub const INTENSITY_LEVELS: u8 = 200;
/// Intensity levels used for training episodes: [0.30, 0.85].
pub const TRAIN_LEVELS: std::ops::RangeInclusive<u8> = 60..=170;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhysicsSetting {
    /// Weight is visible as color intensity (darker is heavier).
    Observed,
    /// Distinct palette colors whose global order fixes the weights; shapes are distractors.
    Unobserved,
    /// Like `Unobserved`, with one fixed shape per weight rank.
    FixedUnobserved,
}

/// Which intensity band an Observed-setting reset draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityDomain {
    /// [0.30, 0.85]
    #[default]
    Train,
    /// [0.05, 0.30) and (0.85, 1.0], disjoint from `Train`.
    Novel,
}

impl IntensityDomain {
    pub fn levels(self) -> Vec<u8> {
        match self {
            IntensityDomain::Train => TRAIN_LEVELS.collect(),
            IntensityDomain::Novel => (10..=59).chain(171..=INTENSITY_LEVELS).collect(),
        }
    }
}

fn default_grid() -> usize {
    5
}

fn default_palette() -> usize {
    8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhysicsConfig {
    #[serde(rename = "M")]
    pub num_objects: usize,
    #[serde(rename = "grid", default = "default_grid")]
    pub grid_size: usize,
    pub setting: PhysicsSetting,
    #[serde(rename = "palette", default = "default_palette")]
    pub palette_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub intensities: IntensityDomain,
}

impl PhysicsConfig {
    pub fn new(num_objects: usize, setting: PhysicsSetting, seed: u64) -> Self {
        PhysicsConfig {
            num_objects,
            grid_size: default_grid(),
            setting,
            palette_size: default_palette().max(num_objects),
            seed,
            intensities: IntensityDomain::Train,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_objects;
        let g = self.grid_size;
        if m == 0 {
            return Err(Error::Config("M must be at least 1".into()));
        }
        if g == 0 || g > 64 {
            return Err(Error::Config(format!("grid {g} outside 1..=64")));
        }
        if m > g * g {
            return Err(Error::Config(format!("M = {m} objects do not fit a {g}x{g} grid")));
        }
        match self.setting {
            PhysicsSetting::Observed => {
                if m > TRAIN_LEVELS.count() {
                    return Err(Error::Config(format!("M = {m} exceeds the intensity lattice")));
                }
            }
            PhysicsSetting::Unobserved | PhysicsSetting::FixedUnobserved => {
                if self.palette_size < m {
                    return Err(Error::Config(format!(
                        "palette {} smaller than M = {m}",
                        self.palette_size
                    )));
                }
                if self.palette_size > PALETTE.len() {
                    return Err(Error::Config(format!(
                        "palette {} exceeds the {} available colors",
                        self.palette_size,
                        PALETTE.len()
                    )));
                }
            }
        }
        if self.setting == PhysicsSetting::FixedUnobserved && m > NUM_SHAPES {
            return Err(Error::Config(format!(
                "fixed_unobserved needs one shape per object; M = {m} > {NUM_SHAPES}"
            )));
        }
        Ok(())
    }

    /// Number of discrete actions: four directions per object.
    pub fn num_actions(&self) -> usize {
        4 * self.num_objects
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }

    /// Neighbour one step in `dir`, or `None` off the grid.
    pub fn offset(self, dir: Direction, grid: usize) -> Option<Cell> {
        let (dr, dc) = dir.delta();
        let row = self.row as isize + dr;
        let col = self.col as isize + dc;
        let g = grid as isize;
        (0..g)
            .contains(&row)
            .then_some(())
            .filter(|_| (0..g).contains(&col))
            .map(|_| Cell::new(row as usize, col as usize))
    }

    pub fn manhattan(self, other: Cell) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

/// Object color as rendered: an intensity level or a palette slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjColor {
    Intensity(u8),
    Palette(u8),
}

impl ObjColor {
    /// Intensity in [0, 1] for the Observed setting.
    pub fn intensity(self) -> Option<f64> {
        match self {
            ObjColor::Intensity(level) => Some(level as f64 / INTENSITY_LEVELS as f64),
            ObjColor::Palette(_) => None,
        }
    }

    /// Compact identifier, unique within a setting.
    pub fn code(self) -> u8 {
        match self {
            ObjColor::Intensity(v) | ObjColor::Palette(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn delta(self) -> (isize, isize) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhysicsAction {
    /// 0 is the heaviest object.
    pub rank: usize,
    pub direction: Direction,
}

impl PhysicsAction {
    pub fn from_index(index: usize) -> Self {
        PhysicsAction {
            rank: index / 4,
            direction: Direction::ALL[index % 4],
        }
    }

    pub fn index(&self) -> usize {
        self.rank * 4 + self.direction.index()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsState {
    pub positions: Vec<Cell>,
    /// Hidden. Only the order matters.
    pub weights: Vec<f64>,
    pub colors: Vec<ObjColor>,
    pub shapes: Vec<u8>,
}

impl PhysicsState {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Object indices from heaviest to lightest.
    pub fn weight_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.weights[b].total_cmp(&self.weights[a]));
        idx
    }

    /// Object sitting on `cell`, if any.
    pub fn occupant(&self, cell: Cell) -> Option<usize> {
        self.positions.iter().position(|&p| p == cell)
    }

    /// Check the structural invariants (distinct cells and weights).
    pub fn check(&self, grid: usize) -> Result<()> {
        let m = self.len();
        if self.weights.len() != m || self.colors.len() != m || self.shapes.len() != m {
            return Err(Error::Mismatch("object attribute lengths differ".into()));
        }
        let mut cells = self.positions.clone();
        cells.sort();
        cells.dedup();
        if cells.len() != m {
            return Err(Error::Mismatch("two objects share a cell".into()));
        }
        if self.positions.iter().any(|c| c.row >= grid || c.col >= grid) {
            return Err(Error::Mismatch("object outside the grid".into()));
        }
        let mut w = self.weights.clone();
        w.sort_by(f64::total_cmp);
        if w.windows(2).any(|p| p[0] == p[1]) {
            return Err(Error::Mismatch("weights are not distinct".into()));
        }
        Ok(())
    }
}

/// Fresh episode state: random distinct cells, and per-setting colors whose
/// order agrees with the weights.
pub fn reset<R: Rng + ?Sized>(config: &PhysicsConfig, rng: &mut R) -> Result<PhysicsState> {
    config.validate()?;
    let m = config.num_objects;
    let g = config.grid_size;
    let positions: Vec<Cell> = index::sample(rng, g * g, m)
        .into_iter()
        .map(|c| Cell::new(c / g, c % g))
        .collect();
    let state = match config.setting {
        PhysicsSetting::Observed => {
            let domain = config.intensities.levels();
            let mut levels: Vec<u8> = index::sample(rng, domain.len(), m)
                .into_iter()
                .map(|i| domain[i])
                .collect();
            // darkest first
            levels.sort_unstable_by(|a, b| b.cmp(a));
            let colors: Vec<ObjColor> = levels.iter().map(|&l| ObjColor::Intensity(l)).collect();
            let weights = colors.iter().map(|c| c.intensity().unwrap_or(0.0)).collect();
            let shapes = (0..m).map(|_| rng.gen_range(0..NUM_SHAPES) as u8).collect();
            PhysicsState {
                positions,
                weights,
                colors,
                shapes,
            }
        }
        PhysicsSetting::Unobserved | PhysicsSetting::FixedUnobserved => {
            let mut slots: Vec<u8> = index::sample(rng, config.palette_size, m)
                .into_iter()
                .map(|i| i as u8)
                .collect();
            // lower palette slot is heavier
            slots.sort_unstable();
            let colors = slots.into_iter().map(ObjColor::Palette).collect();
            let weights = (0..m).map(|r| (m - r) as f64).collect();
            let shapes = if config.setting == PhysicsSetting::FixedUnobserved {
                (0..m).map(|r| r as u8).collect()
            } else {
                (0..m).map(|_| rng.gen_range(0..NUM_SHAPES) as u8).collect()
            };
            PhysicsState {
                positions,
                weights,
                colors,
                shapes,
            }
        }
    };
    Ok(state)
}

/// What happened on a push attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Blocked,
    Moved,
    Pushed,
}

/// Apply one action. Returns the next state and what happened.
pub fn step_with_outcome(
    state: &PhysicsState,
    action: PhysicsAction,
    grid: usize,
) -> (PhysicsState, Outcome) {
    let order = state.weight_order();
    let Some(&a) = order.get(action.rank) else {
        return (state.clone(), Outcome::Blocked);
    };
    let mut next = state.clone();
    let Some(dest) = state.positions[a].offset(action.direction, grid) else {
        return (next, Outcome::Blocked);
    };
    match state.occupant(dest) {
        None => {
            next.positions[a] = dest;
            (next, Outcome::Moved)
        }
        Some(b) if state.weights[a] > state.weights[b] => {
            match dest.offset(action.direction, grid) {
                Some(beyond) if state.occupant(beyond).is_none() => {
                    next.positions[b] = beyond;
                    next.positions[a] = dest;
                    (next, Outcome::Pushed)
                }
                _ => (next, Outcome::Blocked),
            }
        }
        Some(_) => (next, Outcome::Blocked),
    }
}

pub fn step(state: &PhysicsState, action: PhysicsAction, grid: usize) -> PhysicsState {
    step_with_outcome(state, action, grid).0
}

/// Negative mean Manhattan distance to the target, scaled to [-1, 0].
pub fn reward(state: &PhysicsState, target: &PhysicsState, grid: usize) -> Result<f64> {
    let m = state.len();
    if target.len() != m {
        return Err(Error::Mismatch(format!("{m} objects against a {}-object target", target.len())));
    }
    if m == 0 || grid < 2 {
        return Ok(0.0);
    }
    let total: usize = state
        .positions
        .iter()
        .zip(&target.positions)
        .map(|(a, b)| a.manhattan(*b))
        .sum();
    Ok(0.0 - total as f64 / (m as f64 * 2.0 * (grid - 1) as f64))
}

pub fn success(state: &PhysicsState, target: &PhysicsState) -> bool {
    state.positions == target.positions
}
