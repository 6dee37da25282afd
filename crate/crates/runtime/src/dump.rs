//! Rollout dumps: `trajectory.csv`, `episode.json`, `rollout.json`, and frame
//! blobs (`observed.bin`, `predicted_<step>.bin`) in the episode-store format.

use std::fs;
use std::path::Path;

use navworld_sim::store::{read_frames, write_frames};
use navworld_sim::{Episode, Frame};
use serde::{Deserialize, Serialize};

use crate::rollout::RolloutResult;
use crate::Result;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const EPISODE_FILE: &str = "episode.json";
pub const ROLLOUT_FILE: &str = "rollout.json";
pub const OBSERVED_FILE: &str = "observed.bin";

/// One CSV row: the pose an action was taken from. The final row has action
/// `end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub action: String,
    pub arrive_prob: f64,
}

pub fn trajectory_rows(result: &RolloutResult) -> Vec<TrajectoryRow> {
    let mut rows: Vec<_> = result
        .steps
        .iter()
        .map(|s| TrajectoryRow {
            step: s.step,
            x: s.pose.position[0],
            y: s.pose.position[1],
            theta: s.pose.heading(),
            action: s.action.name().to_string(),
            arrive_prob: s.arrive_prob,
        })
        .collect();
    let last = result.final_pose();
    rows.push(TrajectoryRow {
        step: result.steps.len(),
        x: last.position[0],
        y: last.position[1],
        theta: last.heading(),
        action: "end".into(),
        arrive_prob: result.steps.last().map_or(0.0, |s| s.arrive_prob),
    });
    rows
}

pub fn predicted_file(step: usize) -> String {
    format!("predicted_{step}.bin")
}

pub fn write_dump(dir: &Path, ep: &Episode, result: &RolloutResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(TRAJECTORY_FILE))?;
    for row in trajectory_rows(result) {
        w.serialize(row)?;
    }
    w.flush()?;
    fs::write(dir.join(EPISODE_FILE), serde_json::to_vec(ep)?)?;
    fs::write(dir.join(ROLLOUT_FILE), serde_json::to_vec_pretty(result)?)?;
    let res = ep.render.resolution;
    if !result.observed.is_empty() {
        let refs: Vec<&Frame> = result.observed.iter().collect();
        write_frames(&dir.join(OBSERVED_FILE), res, &refs)?;
    }
    for (step, frames) in &result.predicted {
        let refs: Vec<&Frame> = frames.iter().collect();
        write_frames(&dir.join(predicted_file(*step)), res, &refs)?;
    }
    Ok(())
}

/// Everything a dump directory holds.
pub struct Dump {
    pub episode: Episode,
    pub trajectory: Vec<TrajectoryRow>,
    pub observed: Vec<Frame>,
    pub predicted: Vec<(usize, Vec<Frame>)>,
}

pub fn read_dump(dir: &Path) -> Result<Dump> {
    let episode: Episode = serde_json::from_slice(&fs::read(dir.join(EPISODE_FILE))?)?;
    let trajectory = csv::Reader::from_path(dir.join(TRAJECTORY_FILE))?
        .deserialize()
        .collect::<std::result::Result<Vec<TrajectoryRow>, _>>()?;
    let observed_path = dir.join(OBSERVED_FILE);
    let observed = if observed_path.exists() {
        read_frames(&observed_path)?
    } else {
        Vec::new()
    };
    let mut predicted = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(step) = name
            .strip_prefix("predicted_")
            .and_then(|s| s.strip_suffix(".bin"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            predicted.push((step, read_frames(&dir.join(&name))?));
        }
    }
    predicted.sort_by_key(|(s, _)| *s);
    Ok(Dump {
        episode,
        trajectory,
        observed,
        predicted,
    })
}
