//! Training samples cut from expert episodes.

use navworld_geometry::{encode_action, ActionStep};
use navworld_sim::{Episode, Frame};

use crate::config::ModelConfig;
use crate::planner::PlannerInput;
use crate::{ModelError, Result};

/// Everything needed to supervise one decision step `i` of an episode.
#[derive(Debug, Clone)]
pub struct Sample {
    pub tokens: Vec<u32>,
    /// Front frames of steps `i−k .. i−1`, clamped at the first step.
    pub history: Vec<Frame>,
    /// Current `[left, front, right]` views.
    pub current: [Frame; 3],
    /// Front frames of steps `i+1 .. i+F`, clamped at the last step.
    pub future: Vec<Frame>,
    /// The next `N` poses in the frame of step `i`.
    pub actions: Vec<ActionStep>,
}

impl Sample {
    pub fn from_episode(ep: &Episode, i: usize, cfg: &ModelConfig) -> Result<Self> {
        if ep.render.resolution != cfg.resolution {
            return Err(ModelError::Shape(format!(
                "episode renders at {} but the model expects {}",
                ep.render.resolution, cfg.resolution
            )));
        }
        let last = ep.poses.len() - 1;
        let i = i.min(last);
        let front = |j: usize| -> Result<Frame> { Ok(ep.observation(j)?.front) };
        let history = (0..cfg.history)
            .map(|m| front((i + m).saturating_sub(cfg.history)))
            .collect::<Result<Vec<_>>>()?;
        let obs = ep.observation(i)?;
        let future = (1..=cfg.future_frames)
            .map(|m| front((i + m).min(last)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            tokens: ep.tokens.clone(),
            history,
            current: [obs.left, obs.front, obs.right],
            future,
            actions: ep.waypoints(i, cfg.horizon),
        })
    }

    pub fn planner_input(&self) -> (Vec<&Frame>, [&Frame; 3]) {
        (
            self.history.iter().collect(),
            [&self.current[0], &self.current[1], &self.current[2]],
        )
    }

    pub fn with_input<O>(&self, f: impl FnOnce(&PlannerInput<'_>) -> O) -> O {
        let (history, current) = self.planner_input();
        f(&PlannerInput {
            tokens: &self.tokens,
            history: &history,
            current,
        })
    }

    /// Conditioning frames in generator slot order: history, front, right, left.
    pub fn cond_frames(&self) -> Vec<&Frame> {
        let mut v: Vec<&Frame> = self.history.iter().collect();
        v.extend([&self.current[1], &self.current[2], &self.current[0]]);
        v
    }

    pub fn future_frames(&self) -> Vec<&Frame> {
        self.future.iter().collect()
    }

    /// Flow-matching targets for the diffusion policy: the action encoding
    /// with the arrival flag mapped to ±1, row-major `[N, 5]`.
    pub fn policy_targets(&self) -> Vec<f64> {
        self.actions
            .iter()
            .flat_map(|a| {
                let mut r = encode_action(a).to_array();
                r[4] = 2.0 * r[4] - 1.0;
                r
            })
            .collect()
    }
}
