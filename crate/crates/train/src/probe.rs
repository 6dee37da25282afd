//! Overfit probes: train one head (plus the planner) on a handful of fixed
//! samples and compare the expected loss before and after.
//!
//! Flow-matching losses are random in `(t, ε)`, so "the loss" here is the
//! mean over a fixed evaluation set of draws, identical at both ends.

use navworld_model::model::FlowDraw;
use navworld_model::{NavModel, Sample};
use navworld_numerics::{AdamW, AdamWConfig, Graph, LrSchedule, ParamStore, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Stage, TrainConfig, Variant};
use crate::trainer::{batch_losses, BatchItem};
use crate::{Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeTarget {
    Former,
    Diffusion,
    Video,
}

impl ProbeTarget {
    fn prefixes(self) -> [&'static str; 2] {
        match self {
            Self::Former => ["planner.", "former."],
            Self::Diffusion => ["planner.", "policy."],
            Self::Video => ["planner.", "dit."],
        }
    }

    fn train_config(self) -> TrainConfig {
        let (stage, variant) = match self {
            Self::Former => (Stage::Policy, Variant::Former),
            Self::Diffusion => (Stage::Policy, Variant::Diffusion),
            Self::Video => (Stage::Video, Variant::Former),
        };
        TrainConfig {
            stage,
            variant,
            recon_weight: 0.0,
            ..TrainConfig::default()
        }
    }

    fn stochastic(self) -> bool {
        self != Self::Former
    }
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub target: ProbeTarget,
    pub steps: u64,
    pub lr: f64,
    /// Fresh noise draws per sample in each training batch.
    pub draws_per_sample: usize,
    /// Fixed draws per sample in the evaluation set.
    pub eval_draws: usize,
    pub seed: u64,
}

impl ProbeConfig {
    pub fn new(target: ProbeTarget) -> Self {
        Self {
            target,
            steps: 2000,
            lr: 1e-3,
            draws_per_sample: 2,
            eval_draws: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub initial: f64,
    pub final_loss: f64,
    /// Training-batch loss per step.
    pub curve: Vec<f64>,
}

impl ProbeReport {
    pub fn relative_decrease(&self) -> f64 {
        1.0 - self.final_loss / self.initial
    }
}

fn items<R: rand::Rng>(model: &NavModel, samples: &[Sample], per: usize, rng: &mut R) -> Vec<BatchItem> {
    samples
        .iter()
        .flat_map(|s| {
            (0..per)
                .map(|_| BatchItem {
                    sample: s.clone(),
                    draw: FlowDraw::new(&model.cfg, rng),
                    gamma: false,
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

fn evaluate<T: Scalar>(model: &NavModel, store: &mut ParamStore<T>, cfg: &TrainConfig, set: &[BatchItem]) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in set.chunks(8) {
        let mut g = Graph::new(store);
        let l = batch_losses(model, &mut g, cfg, chunk)?;
        sum += g.data(l.total)[0].as_f64() * chunk.len() as f64;
    }
    Ok(sum / set.len() as f64)
}

/// Trains the probe's parameter groups on `samples` and reports the
/// evaluation loss before and after. Trainable flags are left as the probe
/// set them.
pub fn overfit<T: Scalar>(
    model: &NavModel,
    store: &mut ParamStore<T>,
    samples: &[Sample],
    pc: &ProbeConfig,
) -> Result<ProbeReport> {
    if samples.is_empty() {
        return Err(TrainError::Config("probe needs at least one sample".into()));
    }
    let cfg = pc.target.train_config();
    let prefixes = pc.target.prefixes();
    store.set_trainable_where(|n| prefixes.iter().any(|p| n.starts_with(p)));

    let mut rng = ChaCha8Rng::seed_from_u64(pc.seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(pc.seed ^ 0x9e37_79b9_7f4a_7c15);
    let (per, eval_per) = if pc.target.stochastic() {
        (pc.draws_per_sample.max(1), pc.eval_draws.max(1))
    } else {
        (1, 1)
    };
    let eval_set = items(model, samples, eval_per, &mut eval_rng);
    let initial = evaluate(model, store, &cfg, &eval_set)?;

    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: 0.0,
        ..AdamWConfig::default()
    });
    let sched = LrSchedule {
        peak: pc.lr,
        floor_frac: 0.05,
        warmup: (pc.steps / 50).min(50),
        total: pc.steps.max(1),
    };
    let mut curve = Vec::with_capacity(pc.steps as usize);
    for step in 0..pc.steps {
        let batch = items(model, samples, per, &mut rng);
        let (loss, grads) = {
            let mut g = Graph::new(store);
            let l = batch_losses(model, &mut g, &cfg, &batch)?;
            let loss = g.data(l.total)[0].as_f64();
            if !loss.is_finite() {
                return Err(TrainError::NonFinite {
                    step,
                    component: "probe loss".into(),
                });
            }
            (loss, g.backward(l.total)?)
        };
        curve.push(loss);
        opt.step(store, &grads, sched.at(step))?;
    }
    let final_loss = evaluate(model, store, &cfg, &eval_set)?;
    Ok(ProbeReport {
        initial,
        final_loss,
        curve,
    })
}
