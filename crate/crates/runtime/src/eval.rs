use navworld_model::NavModel;
use navworld_numerics::{ParamStore, Scalar};
use navworld_sim::Episode;
use serde::{Deserialize, Serialize};

use crate::metrics::{nav_metrics, EpisodeOutcome, NavMetrics};
use crate::rollout::{random_rollout, rollout, RolloutConfig, RolloutResult};
use crate::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: NavMetrics,
    pub outcomes: Vec<EpisodeOutcome>,
    pub results: Vec<RolloutResult>,
}

impl Evaluation {
    pub(crate) fn new(results: Vec<RolloutResult>, episodes: &[Episode]) -> Result<Self> {
        let outcomes: Vec<_> = results
            .iter()
            .zip(episodes)
            .map(|(r, e)| EpisodeOutcome::from_rollout(r, e))
            .collect();
        Ok(Self {
            metrics: nav_metrics(&outcomes)?,
            outcomes,
            results,
        })
    }

    pub fn generator_calls(&self) -> usize {
        self.results.iter().map(|r| r.generator_calls).sum()
    }
}

/// Rolls out every episode on `lanes` worker threads; results keep the
/// episode order.
pub fn evaluate<T: Scalar>(
    model: &NavModel,
    store: &ParamStore<T>,
    episodes: &[Episode],
    cfg: &RolloutConfig,
    lanes: usize,
) -> Result<Evaluation> {
    let lanes = lanes.clamp(1, episodes.len().max(1));
    let results: Vec<RolloutResult> = if lanes == 1 {
        episodes
            .iter()
            .map(|e| rollout(model, store, e, cfg))
            .collect::<Result<_>>()?
    } else {
        let chunk = episodes.len().div_ceil(lanes);
        std::thread::scope(|s| {
            let handles: Vec<_> = episodes
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(|e| rollout(model, store, e, cfg)).collect::<Result<Vec<_>>>()))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation lane panicked"))
                .collect::<Result<Vec<_>>>()
        })?
        .into_iter()
        .flatten()
        .collect()
    };
    Evaluation::new(results, episodes)
}

/// Metrics of uniformly random actions under the same caps.
pub fn random_baseline(episodes: &[Episode], cfg: &RolloutConfig) -> Result<Evaluation> {
    let results = episodes.iter().map(|e| random_rollout(e, cfg)).collect::<Result<_>>()?;
    Evaluation::new(results, episodes)
}
