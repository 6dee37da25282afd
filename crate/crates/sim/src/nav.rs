use std::cmp::Ordering;
use std::collections::BinaryHeap;

use navworld_geometry::{wrap_angle, Pose, Quat};
use serde::{Deserialize, Serialize};

use crate::map::WorldMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
    Stop,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Forward, Action::TurnLeft, Action::TurnRight, Action::Stop];

    pub fn name(self) -> &'static str {
        match self {
            Action::Forward => "forward",
            Action::TurnLeft => "turn_left",
            Action::TurnRight => "turn_right",
            Action::Stop => "stop",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub forward: f64,
    pub turn: f64,
}

impl Default for Motion {
    fn default() -> Self {
        Self {
            forward: 0.25,
            turn: 15f64.to_radians(),
        }
    }
}

/// Executes one discrete action. A forward move is refused (pose unchanged,
/// `collided = true`) when it would end outside a free cell or slip
/// diagonally between two cells past a blocked corner.
pub fn step(map: &WorldMap, pose: &Pose, action: Action, motion: &Motion) -> (Pose, bool) {
    let yaw = pose.heading();
    match action {
        Action::Stop => (*pose, false),
        Action::TurnLeft | Action::TurnRight => {
            let d = if action == Action::TurnLeft {
                motion.turn
            } else {
                -motion.turn
            };
            let mut p = *pose;
            p.rotation = Quat::from_yaw(wrap_angle(yaw + d));
            (p, false)
        }
        Action::Forward => {
            let [x, y, z] = pose.position;
            let (nx, ny) = (x + motion.forward * yaw.cos(), y + motion.forward * yaw.sin());
            let (ci, cj) = map.cell_of(x, y);
            let (ni, nj) = map.cell_of(nx, ny);
            let mut blocked = !map.is_free(ni, nj);
            if ni != ci && nj != cj {
                blocked |= !map.is_free(ni, cj) || !map.is_free(ci, nj);
            }
            if blocked {
                (*pose, true)
            } else {
                let mut p = *pose;
                p.position = [nx, ny, z];
                (p, false)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PathResult {
    Found { length: f64, cells: Vec<(usize, usize)> },
    Unreachable,
}

const NEIGHBOURS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then_with(|| o.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Allowed 8-connected moves out of a cell with their costs in cell units.
/// Diagonal moves need both orthogonal neighbours free.
pub fn moves(map: &WorldMap, c: (usize, usize)) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
    let (i, j) = (c.0 as i64, c.1 as i64);
    NEIGHBOURS.iter().filter_map(move |&(di, dj)| {
        let (a, b) = (i + di, j + dj);
        if !map.is_free(a, b) {
            return None;
        }
        if di != 0 && dj != 0 {
            if !map.is_free(i + di, j) || !map.is_free(i, j + dj) {
                return None;
            }
            return Some(((a as usize, b as usize), std::f64::consts::SQRT_2));
        }
        Some(((a as usize, b as usize), 1.0))
    })
}

/// Dijkstra from `source`; returns per-cell distances (world units, infinite
/// when unreachable) and predecessors.
pub fn dijkstra(map: &WorldMap, source: (usize, usize)) -> (Vec<f64>, Vec<usize>) {
    let n = map.width * map.height;
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let idx = |c: (usize, usize)| c.1 * map.width + c.0;
    if map.get(source.0, source.1) != crate::map::Cell::Free {
        return (dist, prev);
    }
    dist[idx(source)] = 0.0;
    let mut heap = BinaryHeap::from([Entry(0.0, idx(source))]);
    while let Some(Entry(d, k)) = heap.pop() {
        if d > dist[k] {
            continue;
        }
        let c = (k % map.width, k / map.width);
        for (nc, w) in moves(map, c) {
            let nd = d + w * map.cell_size;
            let nk = idx(nc);
            if nd < dist[nk] {
                dist[nk] = nd;
                prev[nk] = k;
                heap.push(Entry(nd, nk));
            }
        }
    }
    (dist, prev)
}

pub fn shortest_path(map: &WorldMap, from: (usize, usize), to: (usize, usize)) -> PathResult {
    let (dist, prev) = dijkstra(map, from);
    let k = to.1 * map.width + to.0;
    if !dist[k].is_finite() || map.get(to.0, to.1) != crate::map::Cell::Free {
        return PathResult::Unreachable;
    }
    let mut cells = vec![to];
    let mut cur = k;
    while prev[cur] != usize::MAX {
        cur = prev[cur];
        cells.push((cur % map.width, cur / map.width));
    }
    cells.reverse();
    PathResult::Found { length: dist[k], cells }
}

/// Distances to one goal cell, reused for many geodesic queries.
#[derive(Debug, Clone)]
pub struct DistanceField {
    pub goal: (usize, usize),
    pub dist: Vec<f64>,
    width: usize,
}

impl DistanceField {
    pub fn new(map: &WorldMap, goal: (usize, usize)) -> Self {
        Self {
            goal,
            dist: dijkstra(map, goal).0,
            width: map.width,
        }
    }

    pub fn cell(&self, c: (usize, usize)) -> f64 {
        self.dist[c.1 * self.width + c.0]
    }

    /// Geodesic distance from a point: the cell distance plus the straight-line
    /// offset to that cell's centre. Points outside free cells are infinitely far.
    pub fn geodesic(&self, map: &WorldMap, p: [f64; 2]) -> f64 {
        let (i, j) = map.cell_of(p[0], p[1]);
        if !map.is_free(i, j) {
            return f64::INFINITY;
        }
        let c = (i as usize, j as usize);
        let cc = map.cell_center(c);
        self.cell(c) + (p[0] - cc[0]).hypot(p[1] - cc[1])
    }
}
