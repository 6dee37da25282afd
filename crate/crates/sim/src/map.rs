use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Result, SimError};

pub const COLORS: [(&str, [f32; 3]); 6] = [
    ("red", [0.9, 0.1, 0.1]),
    ("green", [0.1, 0.75, 0.2]),
    ("blue", [0.15, 0.3, 0.95]),
    ("yellow", [0.95, 0.85, 0.1]),
    ("purple", [0.6, 0.2, 0.8]),
    ("orange", [1.0, 0.5, 0.0]),
];

pub const CATEGORIES: [&str; 5] = ["sphere", "cube", "door", "chair", "plant"];

pub const WALL_COLOR: [f32; 3] = [0.55, 0.55, 0.55];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell {
    Free,
    Wall,
    Landmark(u8),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: u8,
    pub color: String,
    pub rgb: [f32; 3],
    pub category: String,
    pub category_id: u8,
    pub cell: (usize, usize),
}

impl Landmark {
    pub fn describe(&self) -> String {
        format!("{} {}", self.color, self.category)
    }
}

/// Occupancy grid. Cell `(i, j)` spans `[i·s, (i+1)·s) × [j·s, (j+1)·s)` in
/// world X/Y, where `s` is the cell size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldMap {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub cells: Vec<Cell>,
    pub landmarks: Vec<Landmark>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    /// Probability that an interior cell starts as a wall.
    pub wall_density: f64,
    pub landmarks: usize,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            width: 12,
            height: 12,
            cell_size: 1.0,
            wall_density: 0.12,
            landmarks: 4,
        }
    }
}

impl WorldMap {
    /// Walls on the border, free inside.
    pub fn empty(width: usize, height: usize, cell_size: f64) -> Self {
        let mut cells = vec![Cell::Free; width * height];
        for i in 0..width {
            for j in 0..height {
                if i == 0 || j == 0 || i + 1 == width || j + 1 == height {
                    cells[j * width + i] = Cell::Wall;
                }
            }
        }
        Self {
            width,
            height,
            cell_size,
            cells,
            landmarks: Vec::new(),
        }
    }

    /// Parses rows of `#` (wall), `.` (free) and digits (landmark ids). Row 0
    /// is `j = 0`. Landmark colors and categories follow the id.
    pub fn from_ascii(rows: &[&str], cell_size: f64) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut map = Self::empty(width, height, cell_size);
        for (j, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(SimError::InvalidMap("ragged rows".into()));
            }
            for (i, ch) in row.chars().enumerate() {
                let c = match ch {
                    '#' => Cell::Wall,
                    '.' => Cell::Free,
                    d if d.is_ascii_digit() => {
                        let id = d as u8 - b'0';
                        map.push_landmark(id, (i, j));
                        Cell::Landmark(id)
                    }
                    other => return Err(SimError::InvalidMap(format!("unknown cell '{other}'"))),
                };
                map.cells[j * width + i] = c;
            }
        }
        map.validate()?;
        Ok(map)
    }

    fn push_landmark(&mut self, id: u8, cell: (usize, usize)) {
        let (color, rgb) = COLORS[id as usize % COLORS.len()];
        let category_id = (id as usize % CATEGORIES.len()) as u8;
        self.landmarks.push(Landmark {
            id,
            color: color.to_string(),
            rgb,
            category: CATEGORIES[category_id as usize].to_string(),
            category_id,
            cell,
        });
    }

    pub fn generate<R: Rng>(cfg: &MapConfig, rng: &mut R) -> Result<Self> {
        if cfg.width < 5 || cfg.height < 5 {
            return Err(SimError::InvalidMap("maps need at least 5×5 cells".into()));
        }
        for _ in 0..64 {
            let mut map = Self::empty(cfg.width, cfg.height, cfg.cell_size);
            for j in 1..cfg.height - 1 {
                for i in 1..cfg.width - 1 {
                    if rng.gen_bool(cfg.wall_density) {
                        map.set(i, j, Cell::Wall);
                    }
                }
            }
            map.keep_largest_component();
            let mut free: Vec<(usize, usize)> = map.free_cells();
            free.shuffle(rng);
            let mut colors: Vec<usize> = (0..COLORS.len()).collect();
            colors.shuffle(rng);
            let mut placed = 0;
            for &(i, j) in &free {
                if placed == cfg.landmarks {
                    break;
                }
                if map.is_border(i, j) {
                    continue;
                }
                map.set(i, j, Cell::Wall);
                if map.free_is_connected() && map.landmarks_reachable_with(i, j) {
                    let id = colors[placed] as u8;
                    map.set(i, j, Cell::Landmark(id));
                    let (color, rgb) = COLORS[id as usize];
                    let category_id = rng.gen_range(0..CATEGORIES.len()) as u8;
                    map.landmarks.push(Landmark {
                        id,
                        color: color.to_string(),
                        rgb,
                        category: CATEGORIES[category_id as usize].to_string(),
                        category_id,
                        cell: (i, j),
                    });
                    placed += 1;
                } else {
                    map.set(i, j, Cell::Free);
                }
            }
            if placed == cfg.landmarks && map.validate().is_ok() {
                return Ok(map);
            }
        }
        Err(SimError::InvalidMap("could not place landmarks".into()))
    }

    pub fn get(&self, i: usize, j: usize) -> Cell {
        self.cells[j * self.width + i]
    }

    /// Out-of-range cells read as walls.
    pub fn get_i(&self, i: i64, j: i64) -> Cell {
        if i < 0 || j < 0 || i as usize >= self.width || j as usize >= self.height {
            Cell::Wall
        } else {
            self.get(i as usize, j as usize)
        }
    }

    pub fn set(&mut self, i: usize, j: usize, c: Cell) {
        self.cells[j * self.width + i] = c;
    }

    pub fn is_free(&self, i: i64, j: i64) -> bool {
        self.get_i(i, j) == Cell::Free
    }

    fn is_border(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i + 1 == self.width || j + 1 == self.height
    }

    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for j in 0..self.height {
            for i in 0..self.width {
                if self.get(i, j) == Cell::Free {
                    v.push((i, j));
                }
            }
        }
        v
    }

    /// Cell containing a world point.
    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        ((x / self.cell_size).floor() as i64, (y / self.cell_size).floor() as i64)
    }

    pub fn cell_center(&self, c: (usize, usize)) -> [f64; 2] {
        [(c.0 as f64 + 0.5) * self.cell_size, (c.1 as f64 + 0.5) * self.cell_size]
    }

    pub fn landmark(&self, id: u8) -> Option<&Landmark> {
        self.landmarks.iter().find(|l| l.id == id)
    }

    /// Free 4-neighbours of a cell.
    pub fn free_neighbours4(&self, c: (usize, usize)) -> Vec<(usize, usize)> {
        let (i, j) = (c.0 as i64, c.1 as i64);
        [(i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)]
            .into_iter()
            .filter(|&(a, b)| self.is_free(a, b))
            .map(|(a, b)| (a as usize, b as usize))
            .collect()
    }

    fn component(&self, start: (usize, usize), seen: &mut [bool]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut q = VecDeque::from([start]);
        seen[start.1 * self.width + start.0] = true;
        while let Some(c) = q.pop_front() {
            out.push(c);
            for n in self.free_neighbours4(c) {
                let k = n.1 * self.width + n.0;
                if !seen[k] {
                    seen[k] = true;
                    q.push_back(n);
                }
            }
        }
        out
    }

    fn keep_largest_component(&mut self) {
        let mut seen = vec![false; self.cells.len()];
        let mut best: Vec<(usize, usize)> = Vec::new();
        for c in self.free_cells() {
            if !seen[c.1 * self.width + c.0] {
                let comp = self.component(c, &mut seen);
                if comp.len() > best.len() {
                    best = comp;
                }
            }
        }
        let mut keep = vec![false; self.cells.len()];
        for c in best {
            keep[c.1 * self.width + c.0] = true;
        }
        for (cell, keep) in self.cells.iter_mut().zip(keep) {
            if *cell == Cell::Free && !keep {
                *cell = Cell::Wall;
            }
        }
    }

    fn free_is_connected(&self) -> bool {
        let free = self.free_cells();
        let Some(&first) = free.first() else {
            return false;
        };
        let mut seen = vec![false; self.cells.len()];
        self.component(first, &mut seen).len() == free.len()
    }

    fn landmarks_reachable_with(&self, i: usize, j: usize) -> bool {
        !self.free_neighbours4((i, j)).is_empty() && self.landmarks.iter().all(|l| !self.free_neighbours4(l.cell).is_empty())
    }

    /// Border walls, a single connected free region and a free 4-neighbour
    /// next to every landmark.
    pub fn validate(&self) -> Result<()> {
        for j in 0..self.height {
            for i in 0..self.width {
                if self.is_border(i, j) && self.get(i, j) == Cell::Free {
                    return Err(SimError::InvalidMap(format!("border cell ({i}, {j}) is free")));
                }
            }
        }
        if !self.free_is_connected() {
            return Err(SimError::InvalidMap("free cells are not connected".into()));
        }
        for l in &self.landmarks {
            if self.free_neighbours4(l.cell).is_empty() {
                return Err(SimError::InvalidMap(format!("landmark {} is unreachable", l.id)));
            }
        }
        Ok(())
    }
}
