//! The full bundle: planner, codec, generator, both action heads and the
//! fusion taps, with training losses and samplers.

use navworld_numerics::{Graph, ParamStore, Scalar, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::Codec;
use crate::config::ModelConfig;
use crate::dit::{Dit, DitState};
use crate::flow::{euler_step, gaussian, interpolate, sample_time, time_grid, velocity_target};
use crate::former::{former_loss, ActionFormer, FormerLoss, LossWeights};
use crate::fusion::FusionTap;
use crate::planner::{ContextEmbedding, Planner, PlannerInput, Segment};
use crate::policy::{DiffusionPolicy, PolicyState};
use crate::sample::Sample;
use crate::{ModelError, Result};

#[derive(Debug, Clone)]
pub struct NavModel {
    pub cfg: ModelConfig,
    pub planner: Planner,
    pub codec: Codec,
    pub dit: Dit,
    pub former: ActionFormer,
    pub policy: DiffusionPolicy,
    pub taps: Vec<FusionTap>,
    /// `(policy block, generator block)` per tap.
    pub pairs: Vec<(usize, usize)>,
}

/// Planner output detached from any graph, for reuse across sampler steps.
#[derive(Debug, Clone)]
pub struct ContextValue<T> {
    pub tokens: Tensor<T>,
    pub key_mask: Vec<bool>,
    pub segments: Vec<Segment>,
}

impl<T: Scalar> ContextValue<T> {
    pub fn bind(&self, g: &mut Graph<'_, T>) -> ContextEmbedding {
        let tokens = g.constant(self.tokens.clone());
        let (len, dim) = (self.tokens.shape()[0], self.tokens.shape()[1]);
        ContextEmbedding {
            tokens,
            len,
            dim,
            segments: self.segments.clone(),
            key_mask: self.key_mask.clone(),
        }
    }
}

/// Random quantities of one flow-matching training sample, drawn in a fixed
/// order so that a seed fixes the whole loss.
#[derive(Debug, Clone)]
pub struct FlowDraw {
    pub t: f64,
    pub eps_cond: Vec<f64>,
    pub eps_future: Vec<f64>,
    pub eps_action: Vec<f64>,
}

impl FlowDraw {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let per_frame = cfg.tokens_per_frame() * cfg.latent_channels;
        let t = sample_time(rng);
        Self {
            t,
            eps_cond: gaussian((cfg.history + 3) * per_frame, rng),
            eps_future: gaussian(cfg.future_frames * per_frame, rng),
            eps_action: gaussian(cfg.horizon * 5, rng),
        }
    }
}

/// Outputs of a joint generator + policy pass.
#[derive(Debug, Clone, Copy)]
pub struct JointVelocity {
    pub video: Var,
    pub action: Var,
}

/// Result of synchronized sampling.
#[derive(Debug, Clone)]
pub struct JointSample {
    /// `[N, 5]` row-major action rows.
    pub actions: Vec<f64>,
    /// `[F·h·w, c]` future latents.
    pub future: Vec<f64>,
}

fn check_finite(v: &[f64], step: usize, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite {
            step,
            what: what.to_string(),
        })
    }
}

impl NavModel {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut b = navworld_numerics::Builder::new(store, rng);
        let planner = Planner::new(&mut b, cfg)?;
        let codec = Codec::new(&mut b, cfg)?;
        let dit = Dit::new(&mut b, cfg)?;
        let former = ActionFormer::new(&mut b, cfg)?;
        let policy = DiffusionPolicy::new(&mut b, cfg)?;
        let pairs = cfg.fusion_pairs();
        let taps = b.scoped("fusion", |b| {
            (0..pairs.len())
                .map(|i| FusionTap::new(b, &format!("tap{i}"), cfg.dim, cfg.heads))
                .collect::<navworld_numerics::Result<Vec<_>>>()
        })?;
        Ok(Self {
            cfg: cfg.clone(),
            planner,
            codec,
            dit,
            former,
            policy,
            taps,
            pairs,
        })
    }

    /// Builds a bundle with a fresh store initialised from `seed`.
    pub fn build<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Self::new(&mut store, &mut rng, cfg)?;
        Ok((m, store))
    }

    pub fn encode_context<T: Scalar>(&self, g: &mut Graph<'_, T>, input: &PlannerInput<'_>) -> Result<ContextEmbedding> {
        self.planner.encode_context(g, input)
    }

    pub fn context_value<T: Scalar>(&self, store: &ParamStore<T>, input: &PlannerInput<'_>) -> Result<ContextValue<T>> {
        let mut g = Graph::new(store);
        let c = self.encode_context(&mut g, input)?;
        Ok(ContextValue {
            tokens: g.value(c.tokens).clone(),
            key_mask: c.key_mask,
            segments: c.segments,
        })
    }

    /// Policy velocity for noisy actions `a_t`. With `gamma` set, each tap
    /// advances the generator `video` through its paired block and exchanges
    /// hidden states; without it `video` is never touched.
    pub fn policy_velocity<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        a_t: Var,
        t: f64,
        ctx: &ContextEmbedding,
        gamma: bool,
        mut video: Option<&mut DitState<T>>,
    ) -> Result<Var> {
        if gamma && !self.taps.is_empty() && video.is_none() {
            return Err(ModelError::MissingVideoStates);
        }
        let mut state: PolicyState = self.policy.begin(g, a_t, t)?;
        for i in 0..self.policy.num_blocks() {
            self.policy.step_block(g, &mut state, ctx)?;
            if !gamma {
                continue;
            }
            if let Some(tap) = self.pairs.iter().position(|&(p, _)| p == i) {
                let q = self.pairs[tap].1;
                let v = video.as_deref_mut().ok_or(ModelError::MissingVideoStates)?;
                self.dit.advance_to(g, v, ctx, q + 1)?;
                let (a, vx) = self.taps[tap].exchange(g, state.x, v.x)?;
                state.x = a;
                v.x = vx;
            }
        }
        self.policy.finish(g, state)
    }

    /// Generator and policy evaluated at the same flow time.
    pub fn joint_velocity<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        ctx: &ContextEmbedding,
        latents: Var,
        a_t: Var,
        t: f64,
        gamma: bool,
    ) -> Result<JointVelocity> {
        let mut vs = self.dit.begin(g, latents, t)?;
        let action = self.policy_velocity(g, a_t, t, ctx, gamma, Some(&mut vs))?;
        let video = self.dit.finish(g, vs, ctx)?;
        Ok(JointVelocity { video, action })
    }

    /// Codec latents of `frames` as plain values; no gradient reaches the codec.
    pub fn latents<T: Scalar>(&self, g: &mut Graph<'_, T>, frames: &[&navworld_sim::Frame]) -> Result<Vec<f64>> {
        let z = self.codec.encode(g, frames)?;
        Ok(g.value(z).to_f64_vec())
    }

    /// Generator input: noised conditioning latents followed by `z_future`.
    fn video_input<T: Scalar>(&self, g: &mut Graph<'_, T>, cond: &[f64], eps_cond: &[f64], z_future: &[f64]) -> Result<Var> {
        let c = self.cfg.latent_channels;
        let mut all = interpolate(cond, eps_cond, self.cfg.t_cond);
        all.extend_from_slice(z_future);
        Ok(g.constant(Tensor::from_f64(&[all.len() / c, c], &all)?))
    }

    /// Flow-matching video loss over the future slots only.
    pub fn vg_loss<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        ctx: &ContextEmbedding,
        sample: &Sample,
        draw: &FlowDraw,
    ) -> Result<Var> {
        let (input, target) = self.video_problem(g, sample, draw)?;
        let v = self.dit.forward(g, input, draw.t, ctx)?;
        Ok(g.mse(v, &target)?)
    }

    /// Noisy generator input and velocity target for one sample.
    pub fn video_problem<T: Scalar>(&self, g: &mut Graph<'_, T>, sample: &Sample, draw: &FlowDraw) -> Result<(Var, Tensor<T>)> {
        let cond = self.latents(g, &sample.cond_frames())?;
        let fut = self.latents(g, &sample.future_frames())?;
        let z_t = interpolate(&fut, &draw.eps_future, draw.t);
        let input = self.video_input(g, &cond, &draw.eps_cond, &z_t)?;
        let c = self.cfg.latent_channels;
        let target = Tensor::from_f64(&[fut.len() / c, c], &velocity_target(&fut, &draw.eps_future))?;
        Ok((input, target))
    }

    /// Noisy action rows and velocity target for one sample.
    pub fn action_problem<T: Scalar>(&self, g: &mut Graph<'_, T>, sample: &Sample, draw: &FlowDraw) -> Result<(Var, Tensor<T>)> {
        let a = sample.policy_targets();
        let n = self.cfg.horizon;
        let a_t = interpolate(&a, &draw.eps_action, draw.t);
        let input = g.constant(Tensor::from_f64(&[n, 5], &a_t)?);
        let target = Tensor::from_f64(&[n, 5], &velocity_target(&a, &draw.eps_action))?;
        Ok((input, target))
    }

    /// Policy-only flow-matching loss (fusion off).
    pub fn policy_loss<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        ctx: &ContextEmbedding,
        sample: &Sample,
        draw: &FlowDraw,
    ) -> Result<Var> {
        let (a_t, target) = self.action_problem(g, sample, draw)?;
        let v = self.policy_velocity(g, a_t, draw.t, ctx, false, None)?;
        Ok(g.mse(v, &target)?)
    }

    /// `(L_VG, L_PH)` of a joint pass at the shared time `draw.t`.
    pub fn joint_flow_losses<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        ctx: &ContextEmbedding,
        sample: &Sample,
        draw: &FlowDraw,
        gamma: bool,
    ) -> Result<(Var, Var)> {
        let (vin, vtarget) = self.video_problem(g, sample, draw)?;
        let (ain, atarget) = self.action_problem(g, sample, draw)?;
        let out = self.joint_velocity(g, ctx, vin, ain, draw.t, gamma)?;
        Ok((g.mse(out.video, &vtarget)?, g.mse(out.action, &atarget)?))
    }

    pub fn former_loss<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        ctx: &ContextEmbedding,
        sample: &Sample,
        weights: &LossWeights,
    ) -> Result<FormerLoss> {
        let pred = self.former.forward(g, ctx)?;
        former_loss(g, pred, &sample.actions, weights)
    }

    /// Pixel reconstruction loss of the codec on the sample's current views
    /// and future frames.
    pub fn recon_loss<T: Scalar>(&self, g: &mut Graph<'_, T>, sample: &Sample) -> Result<Var> {
        let mut frames: Vec<&navworld_sim::Frame> = sample.current.iter().collect();
        frames.extend(sample.future.iter());
        self.codec.recon_loss(g, &frames)
    }

    /// Action Former prediction as `[N, 5]` row-major values.
    pub fn former_actions<T: Scalar>(&self, store: &ParamStore<T>, ctx: &ContextValue<T>) -> Result<Vec<f64>> {
        let mut g = Graph::new(store);
        let c = ctx.bind(&mut g);
        let a = self.former.forward(&mut g, &c)?;
        Ok(g.value(a).to_f64_vec())
    }

    /// Euler sampling of the action rows with fusion off.
    pub fn sample_actions<T: Scalar, R: Rng + ?Sized>(
        &self,
        store: &ParamStore<T>,
        ctx: &ContextValue<T>,
        steps: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let n = self.cfg.horizon;
        let mut a = gaussian(n * 5, rng);
        let grid = time_grid(steps);
        for s in 0..steps {
            let mut g = Graph::new(store);
            let c = ctx.bind(&mut g);
            let x = g.constant(Tensor::from_f64(&[n, 5], &a)?);
            let v = self.policy_velocity(&mut g, x, grid[s], &c, false, None)?;
            euler_step(&mut a, &g.value(v).to_f64_vec(), grid[s] - grid[s + 1]);
            check_finite(&a, s, "action state")?;
        }
        Ok(a)
    }

    /// Euler sampling of the future latents given conditioning latents in
    /// generator slot order.
    pub fn sample_future<T: Scalar, R: Rng + ?Sized>(
        &self,
        store: &ParamStore<T>,
        ctx: &ContextValue<T>,
        cond: &[f64],
        steps: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let eps_cond = gaussian(cond.len(), rng);
        let mut z = gaussian(self.future_len(), rng);
        let grid = time_grid(steps);
        for s in 0..steps {
            let mut g = Graph::new(store);
            let c = ctx.bind(&mut g);
            let x = self.video_input(&mut g, cond, &eps_cond, &z)?;
            let v = self.dit.forward(&mut g, x, grid[s], &c)?;
            euler_step(&mut z, &g.value(v).to_f64_vec(), grid[s] - grid[s + 1]);
            check_finite(&z, s, "video state")?;
        }
        Ok(z)
    }

    /// Synchronized sampling of both streams on one time grid with fusion on.
    pub fn sample_joint<T: Scalar, R: Rng + ?Sized>(
        &self,
        store: &ParamStore<T>,
        ctx: &ContextValue<T>,
        cond: &[f64],
        steps: usize,
        rng: &mut R,
    ) -> Result<JointSample> {
        let n = self.cfg.horizon;
        let eps_cond = gaussian(cond.len(), rng);
        let mut z = gaussian(self.future_len(), rng);
        let mut a = gaussian(n * 5, rng);
        let grid = time_grid(steps);
        for s in 0..steps {
            let mut g = Graph::new(store);
            let c = ctx.bind(&mut g);
            let x = self.video_input(&mut g, cond, &eps_cond, &z)?;
            let ax = g.constant(Tensor::from_f64(&[n, 5], &a)?);
            let out = self.joint_velocity(&mut g, &c, x, ax, grid[s], true)?;
            let dt = grid[s] - grid[s + 1];
            euler_step(&mut z, &g.value(out.video).to_f64_vec(), dt);
            euler_step(&mut a, &g.value(out.action).to_f64_vec(), dt);
            check_finite(&z, s, "video state")?;
            check_finite(&a, s, "action state")?;
        }
        Ok(JointSample { actions: a, future: z })
    }

    /// Number of future latent values `F·h·w·c`.
    pub fn future_len(&self) -> usize {
        self.cfg.future_frames * self.cfg.tokens_per_frame() * self.cfg.latent_channels
    }

    /// Decodes `[F·h·w, c]` latents into `F` frames.
    pub fn decode_future<T: Scalar>(&self, store: &ParamStore<T>, future: &[f64]) -> Result<Vec<navworld_sim::Frame>> {
        let per = self.cfg.tokens_per_frame() * self.cfg.latent_channels;
        future.chunks(per).map(|z| self.codec.decode_frame(store, z)).collect()
    }
}
