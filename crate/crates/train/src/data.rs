use navworld_model::{ModelConfig, Sample};
use navworld_sim::{generate_episode, Episode, EpisodeConfig, SimError};
use rand::Rng;

use crate::Result;

/// Episode settings matching a model config (render resolution and history).
pub fn episode_config(model: &ModelConfig) -> EpisodeConfig {
    let mut c = EpisodeConfig::default();
    c.render.resolution = model.resolution;
    c.history = model.history;
    c
}

/// `count` episodes from consecutive seeds starting at `first_seed`. Seeds
/// whose world has no reachable landmark are skipped.
pub fn generate_episodes(first_seed: u64, count: usize, cfg: &EpisodeConfig) -> Result<Vec<Episode>> {
    let mut out = Vec::with_capacity(count);
    let mut seed = first_seed;
    while out.len() < count {
        match generate_episode(seed, cfg) {
            Ok(e) => out.push(e),
            Err(SimError::NoReachableLandmark { .. }) => {}
            Err(e) => return Err(e.into()),
        }
        seed += 1;
    }
    Ok(out)
}

/// Training episodes; a sample is any decision step `0..=len` of any episode.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub episodes: Vec<Episode>,
}

impl Dataset {
    pub fn new(episodes: Vec<Episode>) -> Self {
        Self { episodes }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Uniform episode, then uniform step within it.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let e = rng.gen_range(0..self.episodes.len());
        let s = rng.gen_range(0..=self.episodes[e].len());
        (e, s)
    }

    pub fn sample(&self, index: (usize, usize), cfg: &ModelConfig) -> Result<Sample> {
        Ok(Sample::from_episode(&self.episodes[index.0], index.1, cfg)?)
    }
}
