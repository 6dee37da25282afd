//! Optimizer loop for the three training stages.
//!
//! | stage | trained prefixes | objective |
//! |---|---|---|
//! | 1a | `dit.`, `codec.` | `L_VG + r·L_recon` |
//! | 1b | head (`former.` or `policy.`) | `L_PH` |
//! | 2 | `planner.`, `codec.`, `dit.`, head, `fusion.` (diffusion) | `L_VG + λ·L_PH + r·L_recon` |
//!
//! The logged `total` is `L_VG + λ·L_PH` (stage 1 logs its single term); the
//! codec reconstruction term is logged separately as `l_recon` and only
//! added in `objective`.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use navworld_model::model::FlowDraw;
use navworld_model::{NavModel, Sample};
use navworld_numerics::checkpoint;
use navworld_numerics::{AdamW, AdamWConfig, Graph, LrSchedule, NumericsError, ParamStore, Scalar, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Stage, TrainConfig, Variant};
use crate::data::Dataset;
use crate::{Result, TrainError};

/// One row of the JSON-lines metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub stage: Stage,
    pub variant: Variant,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_vg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_ph: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_pos: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_angle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_arrive: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_recon: Option<f64>,
    pub total: f64,
    pub objective: f64,
    pub lr: f64,
    /// Fraction of samples in the batch with fusion enabled.
    pub gamma_rate: f64,
    pub wall_time_s: f64,
}

impl StepLog {
    /// The log without its wall-clock field, for reproducibility comparisons.
    pub fn without_time(&self) -> Self {
        Self {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

/// A sample with its random draws.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub sample: Sample,
    pub draw: FlowDraw,
    pub gamma: bool,
}

/// Graph nodes of the batch-averaged loss terms.
#[derive(Debug, Clone, Copy)]
pub struct BatchLosses {
    pub l_vg: Option<Var>,
    pub l_ph: Option<Var>,
    pub l_pos: Option<Var>,
    pub l_angle: Option<Var>,
    pub l_arrive: Option<Var>,
    pub l_recon: Option<Var>,
    pub total: Var,
    pub objective: Var,
}

/// Per-sample fusion switch.
pub fn draw_gamma<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    rng.gen_bool(p)
}

fn mean<T: Scalar>(g: &mut Graph<'_, T>, xs: &[Var]) -> Result<Option<Var>> {
    let Some((&first, rest)) = xs.split_first() else {
        return Ok(None);
    };
    let mut acc = first;
    for &x in rest {
        acc = g.add(acc, x)?;
    }
    Ok(Some(g.scale(acc, 1.0 / xs.len() as f64)))
}

/// Builds the stage objective for a batch inside `g`.
pub fn batch_losses<T: Scalar>(
    model: &NavModel,
    g: &mut Graph<'_, T>,
    cfg: &TrainConfig,
    items: &[BatchItem],
) -> Result<BatchLosses> {
    let weights = cfg.former_weights;
    let (mut vg, mut ph, mut pos, mut ang, mut arr, mut rec) = (vec![], vec![], vec![], vec![], vec![], vec![]);
    for it in items {
        let s = &it.sample;
        let ctx = s.with_input(|inp| model.encode_context(g, inp))?;
        let wants_video = cfg.stage != Stage::Policy;
        let wants_policy = cfg.stage != Stage::Video;
        if wants_video && cfg.recon_weight > 0.0 {
            rec.push(model.recon_loss(g, s)?);
        }
        match (cfg.variant, wants_video, wants_policy) {
            (_, true, false) => vg.push(model.vg_loss(g, &ctx, s, &it.draw)?),
            (Variant::Diffusion, false, true) => ph.push(model.policy_loss(g, &ctx, s, &it.draw)?),
            (Variant::Diffusion, true, true) => {
                let (v, p) = model.joint_flow_losses(g, &ctx, s, &it.draw, it.gamma)?;
                vg.push(v);
                ph.push(p);
            }
            (Variant::Former, v, true) => {
                if v {
                    vg.push(model.vg_loss(g, &ctx, s, &it.draw)?);
                }
                let l = model.former_loss(g, &ctx, s, &weights)?;
                ph.push(l.total);
                pos.push(l.pos);
                ang.push(l.angle);
                arr.push(l.arrive);
            }
            (_, false, false) => unreachable!("every stage trains something"),
        }
    }
    let l_vg = mean(g, &vg)?;
    let l_ph = mean(g, &ph)?;
    let total = match (l_vg, l_ph) {
        (Some(v), Some(p)) => {
            let p = g.scale(p, cfg.lambda);
            g.add(v, p)?
        }
        (Some(v), None) => v,
        (None, Some(p)) => p,
        (None, None) => unreachable!(),
    };
    let l_recon = mean(g, &rec)?;
    let objective = match l_recon {
        Some(r) => {
            let r = g.scale(r, cfg.recon_weight);
            g.add(total, r)?
        }
        None => total,
    };
    Ok(BatchLosses {
        l_vg,
        l_ph,
        l_pos: mean(g, &pos)?,
        l_angle: mean(g, &ang)?,
        l_arrive: mean(g, &arr)?,
        l_recon,
        total,
        objective,
    })
}

pub struct Trainer {
    pub cfg: TrainConfig,
    opt: AdamW,
    sched: LrSchedule,
    rng: ChaCha8Rng,
    pub step: u64,
    started: Instant,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let opt = AdamW::new(AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        });
        let sched = LrSchedule {
            peak: cfg.lr,
            floor_frac: cfg.lr_floor_frac,
            warmup: cfg.warmup.min(cfg.steps / 10),
            total: cfg.steps.max(1),
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            opt,
            sched,
            step: 0,
            started: Instant::now(),
        })
    }

    /// Marks exactly the stage's parameter groups as trainable.
    pub fn prepare<T: Scalar>(&self, store: &mut ParamStore<T>) {
        let cfg = self.cfg.clone();
        store.set_trainable_where(move |n| cfg.trains(n));
    }

    /// Draws a batch: indices, then for each sample its fusion switch (joint
    /// diffusion only) and its flow-matching noise.
    pub fn draw_batch(&mut self, model: &NavModel, data: &Dataset) -> Result<Vec<BatchItem>> {
        let idx: Vec<_> = (0..self.cfg.batch_size).map(|_| data.draw(&mut self.rng)).collect();
        let fusion = self.cfg.stage == Stage::Joint && self.cfg.variant == Variant::Diffusion;
        idx.into_iter()
            .map(|i| {
                let sample = data.sample(i, &model.cfg)?;
                let gamma = fusion && draw_gamma(&mut self.rng, self.cfg.mmfca_prob);
                let draw = FlowDraw::new(&model.cfg, &mut self.rng);
                Ok(BatchItem { sample, draw, gamma })
            })
            .collect()
    }

    /// One optimizer update on `items`.
    pub fn step_on<T: Scalar>(&mut self, model: &NavModel, store: &mut ParamStore<T>, items: &[BatchItem]) -> Result<StepLog> {
        let step = self.step;
        let lr = self.sched.at(step);
        let (log, grads) = {
            let mut g = Graph::new(store);
            let l = batch_losses(model, &mut g, &self.cfg, items)?;
            let val = |v: Option<Var>| v.map(|v| g.data(v)[0].as_f64());
            let log = StepLog {
                step,
                stage: self.cfg.stage,
                variant: self.cfg.variant,
                l_vg: val(l.l_vg),
                l_ph: val(l.l_ph),
                l_pos: val(l.l_pos),
                l_angle: val(l.l_angle),
                l_arrive: val(l.l_arrive),
                l_recon: val(l.l_recon),
                total: g.data(l.total)[0].as_f64(),
                objective: g.data(l.objective)[0].as_f64(),
                lr,
                gamma_rate: items.iter().filter(|i| i.gamma).count() as f64 / items.len().max(1) as f64,
                wall_time_s: self.started.elapsed().as_secs_f64(),
            };
            for (name, v) in [
                ("l_vg", log.l_vg),
                ("l_ph", log.l_ph),
                ("l_recon", log.l_recon),
                ("objective", Some(log.objective)),
            ] {
                if v.is_some_and(|v| !v.is_finite()) {
                    return Err(TrainError::NonFinite {
                        step,
                        component: name.to_string(),
                    });
                }
            }
            (log, g.backward(l.objective)?)
        };
        self.opt.step(store, &grads, lr).map_err(|e| match e {
            NumericsError::NonFinite { name } => TrainError::NonFinite {
                step,
                component: format!("gradient of {name}"),
            },
            other => other.into(),
        })?;
        self.step += 1;
        Ok(log)
    }

    /// Runs the configured number of steps, writing one JSON line per step
    /// and checkpoints into `out` when given.
    pub fn run<T: Scalar>(
        &mut self,
        model: &NavModel,
        store: &mut ParamStore<T>,
        data: &Dataset,
        mut log: Option<&mut dyn Write>,
        out: Option<&Path>,
    ) -> Result<Vec<StepLog>> {
        self.prepare(store);
        self.started = Instant::now();
        let mut logs = Vec::with_capacity(self.cfg.steps as usize);
        while self.step < self.cfg.steps {
            let items = self.draw_batch(model, data)?;
            let l = self.step_on(model, store, &items)?;
            if let Some(w) = log.as_deref_mut() {
                serde_json::to_writer(&mut *w, &l)?;
                w.write_all(b"\n")?;
            }
            logs.push(l);
            if let Some(dir) = out {
                let every = self.cfg.checkpoint_every;
                if every > 0 && self.step.is_multiple_of(every) && self.step < self.cfg.steps {
                    self.save(model, store, &dir.join(format!("step_{}.ckpt", self.step)))?;
                }
            }
        }
        if let Some(dir) = out {
            self.save(model, store, &dir.join("last.ckpt"))?;
        }
        Ok(logs)
    }

    pub fn save<T: Scalar>(&self, model: &NavModel, store: &ParamStore<T>, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "stage": self.cfg.stage,
            "variant": self.cfg.variant,
            "model": model.cfg,
        });
        checkpoint::save(path, store, &model.cfg.hash(), self.step, meta)?;
        Ok(())
    }
}
