use std::f64::consts::FRAC_PI_2;

use navworld_geometry::Pose;
use serde::{Deserialize, Serialize};

use crate::map::{Cell, WorldMap, WALL_COLOR};
use crate::{Result, SimError};

pub const FLOOR_COLOR: [f32; 3] = [0.35, 0.3, 0.25];
pub const CEILING_COLOR: [f32; 3] = [0.75, 0.8, 0.85];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    /// Square view resolution in pixels.
    pub resolution: usize,
    pub fov: f64,
    pub max_distance: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            resolution: 32,
            fov: FRAC_PI_2,
            max_distance: 16.0,
        }
    }
}

/// One RGB image, row-major `[row][col][channel]`, row 0 at the top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub res: usize,
    pub data: Vec<f32>,
}

impl Frame {
    pub fn len_for(res: usize) -> usize {
        res * res * 3
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let k = (row * self.res + col) * 3;
        [self.data[k], self.data[k + 1], self.data[k + 2]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub left: Frame,
    pub front: Frame,
    pub right: Frame,
    pub pose: Pose,
}

impl Observation {
    pub fn views(&self) -> [&Frame; 3] {
        [&self.left, &self.front, &self.right]
    }
}

/// Camera headings `[left, front, right]` for an agent heading. The left
/// camera looks 90° counter-clockwise of the front one.
pub fn camera_yaws(heading: f64) -> [f64; 3] {
    [heading + FRAC_PI_2, heading, heading - FRAC_PI_2]
}

pub fn render(map: &WorldMap, pose: &Pose, cfg: &RenderConfig) -> Result<Observation> {
    let [x, y, _] = pose.position;
    let (i, j) = map.cell_of(x, y);
    if !map.is_free(i, j) {
        return Err(SimError::PoseInWall { x, y });
    }
    let [l, f, r] = camera_yaws(pose.heading());
    Ok(Observation {
        left: render_view(map, x, y, l, cfg),
        front: render_view(map, x, y, f, cfg),
        right: render_view(map, x, y, r, cfg),
        pose: *pose,
    })
}

struct Hit {
    perp: f64,
    cell: Cell,
    y_side: bool,
    tex_u: f64,
}

/// Grid traversal along one ray; returns the first non-free cell within range.
fn cast(map: &WorldMap, x: f64, y: f64, angle: f64, max_distance: f64) -> Option<Hit> {
    let cs = map.cell_size;
    let (px, py) = (x / cs, y / cs);
    let (dx, dy) = (angle.cos(), angle.sin());
    let (mut ci, mut cj) = (px.floor() as i64, py.floor() as i64);
    let delta_x = if dx == 0.0 { f64::INFINITY } else { (1.0 / dx).abs() };
    let delta_y = if dy == 0.0 { f64::INFINITY } else { (1.0 / dy).abs() };
    let (step_i, mut side_x) = if dx < 0.0 {
        (-1, (px - ci as f64) * delta_x)
    } else {
        (1, (ci as f64 + 1.0 - px) * delta_x)
    };
    let (step_j, mut side_y) = if dy < 0.0 {
        (-1, (py - cj as f64) * delta_y)
    } else {
        (1, (cj as f64 + 1.0 - py) * delta_y)
    };
    let max_cells = max_distance / cs;
    loop {
        let (t, y_side) = if side_x < side_y {
            let t = side_x;
            side_x += delta_x;
            ci += step_i;
            (t, false)
        } else {
            let t = side_y;
            side_y += delta_y;
            cj += step_j;
            (t, true)
        };
        if t > max_cells {
            return None;
        }
        let cell = map.get_i(ci, cj);
        if cell != Cell::Free {
            let hit_along = if y_side { px + t * dx } else { py + t * dy };
            return Some(Hit {
                perp: t * cs,
                cell,
                y_side,
                tex_u: hit_along - hit_along.floor(),
            });
        }
    }
}

fn pattern(category: u8, u: f64, v: f64) -> f32 {
    let on = match category {
        1 => u > 0.5,
        2 => !(0.25..=0.75).contains(&v),
        3 => ((u * 2.0) as i32 + (v * 2.0) as i32) % 2 == 1,
        4 => ((u * 4.0) as i32) % 2 == 1,
        _ => false,
    };
    if on {
        0.7
    } else {
        1.0
    }
}

fn render_view(map: &WorldMap, x: f64, y: f64, yaw: f64, cfg: &RenderConfig) -> Frame {
    let v = cfg.resolution;
    let mut data = vec![0.0f32; Frame::len_for(v)];
    let half = (cfg.fov * 0.5).tan();
    for col in 0..v {
        let s = 1.0 - 2.0 * (col as f64 + 0.5) / v as f64;
        let off = (s * half).atan();
        let hit = cast(map, x, y, yaw + off, cfg.max_distance / off.cos());
        let (top, bottom, base, shade, cat) = match &hit {
            Some(h) => {
                let perp = (h.perp * off.cos()).max(0.05);
                let height = 0.6 * v as f64 / perp;
                let mid = 0.5 * v as f64;
                let (base, cat) = match h.cell {
                    Cell::Landmark(id) => {
                        let lm = map.landmark(id);
                        (lm.map_or(WALL_COLOR, |l| l.rgb), lm.map(|l| l.category_id))
                    }
                    _ => (WALL_COLOR, None),
                };
                let mut shade = 1.0 / (1.0 + 0.15 * perp);
                if h.y_side {
                    shade *= 0.8;
                }
                (mid - 0.5 * height, mid + 0.5 * height, base, shade as f32, cat)
            }
            None => (0.5 * v as f64, 0.5 * v as f64, WALL_COLOR, 0.0, None),
        };
        for row in 0..v {
            let c = row as f64 + 0.5;
            let rgb = if c < top {
                CEILING_COLOR
            } else if c >= bottom {
                FLOOR_COLOR
            } else {
                let tex_v = (c - top) / (bottom - top);
                let p = match (cat, &hit) {
                    (Some(k), Some(h)) => pattern(k, h.tex_u, tex_v),
                    _ => 1.0,
                };
                [base[0] * shade * p, base[1] * shade * p, base[2] * shade * p]
            };
            let k = (row * v + col) * 3;
            data[k..k + 3].copy_from_slice(&rgb);
        }
    }
    Frame { res: v, data }
}
