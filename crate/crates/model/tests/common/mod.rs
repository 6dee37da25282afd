#![allow(dead_code)]

use navworld_model::{ModelConfig, ModelError, NavModel, Sample};
use navworld_numerics::{NumericsError, ParamStore};
use navworld_sim::{generate_episode, Episode, EpisodeConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn episode(cfg: &ModelConfig, seed: u64) -> Episode {
    let mut ec = EpisodeConfig::default();
    ec.render.resolution = cfg.resolution;
    ec.history = cfg.history;
    generate_episode(seed, &ec).unwrap()
}

pub fn sample(cfg: &ModelConfig, seed: u64, step: usize) -> Sample {
    let ep = episode(cfg, seed);
    Sample::from_episode(&ep, step.min(ep.len()), cfg).unwrap()
}

/// A bundle with every parameter redrawn from N(0, std²), so that zero-initialised
/// layers take part in the computation.
pub fn randomized(cfg: &ModelConfig, seed: u64, std: f64) -> (NavModel, ParamStore<f64>) {
    let (m, mut store) = NavModel::build::<f64>(cfg, seed).unwrap();
    store.randomize(std, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    (m, store)
}

pub fn nx<T>(r: Result<T, ModelError>) -> Result<T, NumericsError> {
    r.map_err(|e| NumericsError::InvalidArgument {
        op: "model",
        msg: e.to_string(),
    })
}
