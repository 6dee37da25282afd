use navworld_model::NavModel;
use navworld_numerics::{ParamStore, Scalar};
use navworld_sim::Episode;
use navworld_train::Variant;
use serde::{Deserialize, Serialize};

use crate::eval::Evaluation;
use crate::rollout::{rollout, RolloutConfig, RolloutResult};
use crate::sfs::SfsSchedule;
use crate::{Result, RuntimeError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedRow {
    pub k: usize,
    pub episodes: usize,
    pub mean_wall_s: f64,
    pub mean_decision_s: f64,
    pub sr: f64,
    pub decisions: usize,
    pub generator_calls: usize,
    /// `Σ ⌈T_e / k⌉` over episodes (zero when the generator is never used).
    pub expected_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedReport {
    pub rows: Vec<SpeedRow>,
}

impl SpeedReport {
    pub fn row(&self, k: usize) -> Option<&SpeedRow> {
        self.rows.iter().find(|r| r.k == k)
    }

    /// Mean per-episode wall time at `base` divided by that at `k`.
    pub fn speedup(&self, base: usize, k: usize) -> Option<f64> {
        Some(self.row(base)?.mean_wall_s / self.row(k)?.mean_wall_s)
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:>4} {:>9} {:>12} {:>14} {:>6} {:>10} {:>10}\n",
            "k", "episodes", "wall/ep (s)", "wall/step (ms)", "SR", "gen calls", "⌈T/k⌉"
        );
        for r in &self.rows {
            s += &format!(
                "{:>4} {:>9} {:>12.3} {:>14.2} {:>6.3} {:>10} {:>10}\n",
                r.k,
                r.episodes,
                r.mean_wall_s,
                r.mean_decision_s * 1e3,
                r.sr,
                r.generator_calls,
                r.expected_calls
            );
        }
        s
    }
}

/// Evaluates the same episodes at each SFS interval, single-threaded so wall
/// times are comparable.
///
/// Intervals are interleaved per episode, so that background load hits every
/// `k` alike, and each rollout is timed `repeats` times keeping the fastest.
/// Rollouts are deterministic, so repeats differ only in timing.
pub fn speed_report<T: Scalar>(
    model: &NavModel,
    store: &ParamStore<T>,
    episodes: &[Episode],
    ks: &[usize],
    base: &RolloutConfig,
    repeats: usize,
) -> Result<SpeedReport> {
    if repeats == 0 {
        return Err(RuntimeError::InvalidArgument("speed_report needs at least one repeat".into()));
    }
    let generates = base.variant == Variant::Diffusion && base.generator;
    let cfgs = ks
        .iter()
        .map(|&k| {
            Ok(RolloutConfig {
                schedule: SfsSchedule::new(k, base.schedule.horizon)?,
                ..base.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut results: Vec<Vec<RolloutResult>> = vec![Vec::with_capacity(episodes.len()); ks.len()];
    for ep in episodes {
        let mut best: Vec<Option<RolloutResult>> = vec![None; ks.len()];
        for _ in 0..repeats {
            for (slot, cfg) in best.iter_mut().zip(&cfgs) {
                let r = rollout(model, store, ep, cfg)?;
                if slot.as_ref().is_none_or(|b| r.wall_s < b.wall_s) {
                    *slot = Some(r);
                }
            }
        }
        for (out, r) in results.iter_mut().zip(best) {
            out.push(r.expect("at least one repeat"));
        }
    }
    let mut rows = Vec::with_capacity(ks.len());
    for ((&k, cfg), res) in ks.iter().zip(&cfgs).zip(results) {
        let ev = Evaluation::new(res, episodes)?;
        let decisions: usize = ev.results.iter().map(|r| r.decisions.len()).sum();
        let wall: f64 = ev.results.iter().map(|r| r.wall_s).sum();
        rows.push(SpeedRow {
            k,
            episodes: episodes.len(),
            mean_wall_s: wall / episodes.len().max(1) as f64,
            mean_decision_s: wall / decisions.max(1) as f64,
            sr: ev.metrics.sr,
            decisions,
            generator_calls: ev.generator_calls(),
            expected_calls: if generates {
                ev.results.iter().map(|r| cfg.schedule.calls(r.decisions.len())).sum()
            } else {
                0
            },
        });
    }
    Ok(SpeedReport { rows })
}
