use navworld_sim::{DistanceField, Episode, Frame};
use serde::{Deserialize, Serialize};

use crate::rollout::RolloutResult;
use crate::{Result, RuntimeError};

/// PSNR reported for identical frames.
pub const PSNR_CAP: f64 = 99.0;

/// What the navigation metrics need from one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    /// Stopped by choice within the success radius.
    pub success: bool,
    /// Came within the success radius at some point.
    pub oracle_success: bool,
    /// Geodesic distance from the final position to the goal.
    pub final_distance: f64,
    /// Executed path length `p`.
    pub path_length: f64,
    /// Shortest-path length `l` from start to goal.
    pub shortest: f64,
}

impl EpisodeOutcome {
    /// Scores a rollout against its episode; the success radius is the
    /// episode's arrival threshold.
    pub fn from_rollout(result: &RolloutResult, ep: &Episode) -> Self {
        let field = DistanceField::new(&ep.map, ep.goal_cell);
        let d = |p: &navworld_geometry::Pose| field.geodesic(&ep.map, p.xy());
        let radius = ep.arrival_threshold;
        let final_distance = d(&result.final_pose());
        Self {
            success: result.agent_stopped() && final_distance <= radius,
            oracle_success: result.poses.iter().any(|p| d(p) <= radius),
            final_distance,
            path_length: result.path_length(),
            shortest: ep.geodesic,
        }
    }

    /// `S·l / max(p, l)`.
    pub fn spl(&self) -> f64 {
        if !self.success {
            return 0.0;
        }
        let denom = self.path_length.max(self.shortest);
        if denom <= 0.0 {
            1.0
        } else {
            self.shortest / denom
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavMetrics {
    pub sr: f64,
    pub os: f64,
    pub spl: f64,
    pub ne: f64,
    pub episodes: usize,
}

pub fn nav_metrics(outcomes: &[EpisodeOutcome]) -> Result<NavMetrics> {
    if outcomes.is_empty() {
        return Err(RuntimeError::InvalidArgument(
            "navigation metrics need at least one episode".into(),
        ));
    }
    let n = outcomes.len() as f64;
    let frac = |f: &dyn Fn(&EpisodeOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count() as f64 / n;
    Ok(NavMetrics {
        sr: frac(&|o| o.success),
        os: frac(&|o| o.oracle_success),
        spl: outcomes.iter().map(EpisodeOutcome::spl).sum::<f64>() / n,
        ne: outcomes.iter().map(|o| o.final_distance).sum::<f64>() / n,
        episodes: outcomes.len(),
    })
}

/// `10·log₁₀(1/MSE)` in dB for frames with values in `[0, 1]`, capped at
/// [`PSNR_CAP`].
pub fn psnr(pred: &Frame, gt: &Frame) -> Result<f64> {
    if pred.res != gt.res || pred.data.len() != gt.data.len() {
        return Err(RuntimeError::Shape(format!(
            "frames of {} and {} values ({} px vs {} px)",
            pred.data.len(),
            gt.data.len(),
            pred.res,
            gt.res
        )));
    }
    if pred.data.is_empty() {
        return Err(RuntimeError::Shape("empty frames".into()));
    }
    if pred.data.iter().chain(&gt.data).any(|v| !(0.0..=1.0).contains(v)) {
        return Err(RuntimeError::InvalidArgument("frame values must lie in [0, 1]".into()));
    }
    let mse = pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
        .sum::<f64>()
        / pred.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}
