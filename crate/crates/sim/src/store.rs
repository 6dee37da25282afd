//! On-disk episode store.
//!
//! `index.jsonl` holds one [`EpisodeRecord`] per line. `frames.bin` is a frame
//! blob: the magic `NWFR`, then little-endian `u32` version, resolution `V`
//! and frame count, then `V·V·3` little-endian `f32` values per frame in
//! row-major `[row][col][channel]` order. Each pose contributes three frames
//! (left, front, right).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::episode::Episode;
use crate::render::{Frame, Observation};
use crate::{Result, SimError};

pub const FRAME_MAGIC: &[u8; 4] = b"NWFR";
pub const FRAME_VERSION: u32 = 1;
pub const INDEX_FILE: &str = "index.jsonl";
pub const FRAMES_FILE: &str = "frames.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    #[serde(flatten)]
    pub episode: Episode,
    /// First frame of this episode in the blob, if frames were written.
    pub frame_offset: Option<u64>,
    pub frame_count: u64,
}

pub fn write_frames(path: &Path, res: usize, frames: &[&Frame]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FRAME_MAGIC)?;
    for v in [FRAME_VERSION, res as u32, frames.len() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for f in frames {
        if f.res != res {
            return Err(SimError::Store(format!("frame of resolution {} in a {res} blob", f.res)));
        }
        for x in &f.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_frames(path: &Path) -> Result<Vec<Frame>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; 16];
    r.read_exact(&mut head)?;
    if &head[..4] != FRAME_MAGIC {
        return Err(SimError::Store("bad frame blob magic".into()));
    }
    let word = |k: usize| u32::from_le_bytes(head[4 * k..4 * k + 4].try_into().unwrap());
    if word(1) != FRAME_VERSION {
        return Err(SimError::Store(format!("unsupported frame blob version {}", word(1))));
    }
    let (res, count) = (word(2) as usize, word(3) as usize);
    let mut buf = vec![0u8; Frame::len_for(res) * 4];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(Frame { res, data });
    }
    Ok(out)
}

/// Writes the index and, when `with_frames`, renders every observation into the blob.
pub fn write_store(dir: &Path, episodes: &[Episode], with_frames: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut index = BufWriter::new(File::create(dir.join(INDEX_FILE))?);
    let mut frames: Vec<Frame> = Vec::new();
    let res = episodes.first().map_or(0, |e| e.render.resolution);
    for ep in episodes {
        let count = 3 * ep.poses.len() as u64;
        let offset = if with_frames {
            let off = frames.len() as u64;
            for obs in ep.observations()? {
                let Observation { left, front, right, .. } = obs;
                frames.extend([left, front, right]);
            }
            Some(off)
        } else {
            None
        };
        let rec = EpisodeRecord {
            episode: ep.clone(),
            frame_offset: offset,
            frame_count: count,
        };
        serde_json::to_writer(&mut index, &rec)?;
        index.write_all(b"\n")?;
    }
    index.flush()?;
    if with_frames {
        let refs: Vec<&Frame> = frames.iter().collect();
        write_frames(&dir.join(FRAMES_FILE), res, &refs)?;
    }
    Ok(())
}

pub fn read_index(dir: &Path) -> Result<Vec<EpisodeRecord>> {
    let r = BufReader::new(File::open(dir.join(INDEX_FILE))?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn read_episodes(dir: &Path) -> Result<Vec<Episode>> {
    Ok(read_index(dir)?.into_iter().map(|r| r.episode).collect())
}
