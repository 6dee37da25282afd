//! PNG renderings of a dump: a top-down trajectory overlay and, for every
//! generator-active step, a strip of predicted (top) versus observed (bottom)
//! future front views.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use navworld_sim::{Cell, Frame};

use crate::dump::{read_dump, Dump};
use crate::Result;

const CELL_PX: usize = 24;
const FRAME_SCALE: usize = 4;

/// RGB8 canvas, row 0 at the top.
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

fn to_u8(c: [f32; 3]) -> [u8; 3] {
    c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

impl Canvas {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: fill.repeat(width * height),
        }
    }

    pub fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            let k = (y as usize * self.width + x as usize) * 3;
            self.data[k..k + 3].copy_from_slice(&c);
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let k = (y * self.width + x) * 3;
        [self.data[k], self.data[k + 1], self.data[k + 2]]
    }

    pub fn rect(&mut self, x0: i64, y0: i64, w: i64, h: i64, c: [u8; 3]) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                self.set(x, y, c);
            }
        }
    }

    pub fn line(&mut self, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            self.rect(x0 - 1, y0 - 1, 2, 2, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    pub fn circle(&mut self, (cx, cy): (i64, i64), r: f64, c: [u8; 3]) {
        let n = (r * 8.0).max(16.0) as usize;
        for i in 0..n {
            let a = i as f64 / n as f64 * std::f64::consts::TAU;
            self.set(cx + (r * a.cos()).round() as i64, cy + (r * a.sin()).round() as i64, c);
        }
    }

    pub fn blit(&mut self, frame: &Frame, x0: usize, y0: usize, scale: usize) {
        for row in 0..frame.res * scale {
            for col in 0..frame.res * scale {
                let c = to_u8(frame.pixel(row / scale, col / scale));
                self.set((x0 + col) as i64, (y0 + row) as i64, c);
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header()?.write_image_data(&self.data)?;
        Ok(())
    }
}

/// Top-down map with walls, landmarks, the success radius around the goal,
/// the start, and the executed path.
pub fn trajectory_canvas(dump: &Dump) -> Canvas {
    let map = &dump.episode.map;
    let (w, h) = (map.width * CELL_PX, map.height * CELL_PX);
    let mut c = Canvas::new(w, h, [255, 255, 255]);
    let px = |x: f64, y: f64| -> (i64, i64) {
        let s = CELL_PX as f64 / map.cell_size;
        ((x * s).round() as i64, h as i64 - 1 - (y * s).round() as i64)
    };
    for j in 0..map.height {
        for i in 0..map.width {
            let color = match map.get(i, j) {
                Cell::Free => [235, 228, 215],
                Cell::Wall => to_u8(navworld_sim::map::WALL_COLOR),
                Cell::Landmark(id) => map.landmark(id).map_or([0, 0, 0], |l| to_u8(l.rgb)),
            };
            let y0 = (map.height - 1 - j) * CELL_PX;
            c.rect((i * CELL_PX) as i64, y0 as i64, CELL_PX as i64, CELL_PX as i64, color);
        }
    }
    let ep = &dump.episode;
    let goal = px(ep.goal[0], ep.goal[1]);
    c.circle(goal, ep.arrival_threshold / map.cell_size * CELL_PX as f64, [20, 150, 40]);
    c.rect(goal.0 - 3, goal.1 - 3, 6, 6, [20, 150, 40]);
    let start = px(ep.start.position[0], ep.start.position[1]);
    c.rect(start.0 - 4, start.1 - 4, 8, 8, [30, 60, 200]);
    for pair in dump.trajectory.windows(2) {
        c.line(px(pair[0].x, pair[0].y), px(pair[1].x, pair[1].y), [210, 30, 30]);
    }
    if let Some(last) = dump.trajectory.last() {
        let p = px(last.x, last.y);
        c.rect(p.0 - 3, p.1 - 3, 6, 6, [0, 0, 0]);
    }
    c
}

/// Predicted frames on top, the frames actually observed afterwards below.
pub fn strip_canvas(predicted: &[Frame], observed: &[Frame], step: usize) -> Canvas {
    let res = predicted.first().map_or(1, |f| f.res);
    let tile = res * FRAME_SCALE;
    let gap = 2;
    let n = predicted.len().max(1);
    let mut c = Canvas::new(n * (tile + gap) + gap, 2 * tile + 3 * gap, [255, 255, 255]);
    for (m, f) in predicted.iter().enumerate() {
        c.blit(f, gap + m * (tile + gap), gap, FRAME_SCALE);
        if let Some(o) = observed.get((step + m + 1).min(observed.len().saturating_sub(1))) {
            c.blit(o, gap + m * (tile + gap), 2 * gap + tile, FRAME_SCALE);
        }
    }
    c
}

/// Renders `trajectory.png` and one `strip_<step>.png` per prediction into
/// `out`; returns the written paths.
pub fn plot_dump(dump_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let dump = read_dump(dump_dir)?;
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let path = out.join("trajectory.png");
    trajectory_canvas(&dump).save(&path)?;
    written.push(path);
    for (step, frames) in &dump.predicted {
        let path = out.join(format!("strip_{step}.png"));
        strip_canvas(frames, &dump.observed, *step).save(&path)?;
        written.push(path);
    }
    Ok(written)
}
