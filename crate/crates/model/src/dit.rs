//! Latent video generator: a diffusion transformer over frame slots.
//!
//! Slots are ordered history `0..k`, current front, right, left, then future
//! `1..=F`; each contributes `h·w` tokens. Every block is
//!
//! ```text
//! x += gate₁ · SelfAttn(modulate(norm(x), shift₁, scale₁))   with 3-axis RoPE
//! x += CrossAttn(LN(x), C)
//! x += gate₂ · MLP(modulate(norm(x), shift₂, scale₂))
//! ```
//!
//! with per-token `(shift, scale, gate)` from the token's slot time: zero for
//! conditioning slots and the flow time `t` for future slots. The modulation
//! and output layers start at zero, so a fresh generator predicts `v ≡ 0`.

use navworld_numerics::nn::{modulate, norm};
use navworld_numerics::{
    Builder, Graph, Init, LayerNorm, Linear, Mlp, MultiHeadAttention, ParamId, RopePair, Scalar, TimestepEmbedder, Var,
};
use rand::Rng;

use crate::config::ModelConfig;
use crate::planner::ContextEmbedding;
use crate::rope::{assign_rope_coords, rope_angles, SlotRole};
use crate::{ModelError, Result};

#[derive(Debug, Clone)]
pub struct DitBlock {
    pub ada: Linear,
    pub attn: MultiHeadAttention,
    pub ln_cross: LayerNorm,
    pub cross: MultiHeadAttention,
    pub mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct Dit {
    pub in_proj: Linear,
    pub role_embed: ParamId,
    pub t_embed: TimestepEmbedder,
    pub blocks: Vec<DitBlock>,
    pub final_ada: Linear,
    pub out: Linear,
    roles: Vec<SlotRole>,
    angles: Vec<f64>,
    tokens_per_frame: usize,
    channels: usize,
    dim: usize,
    heads: usize,
}

/// Hidden state of a partially evaluated generator pass.
pub struct DitState<T> {
    /// Current token states, `[slots·h·w, D]`.
    pub x: Var,
    /// Index of the next block to run.
    pub next: usize,
    cond: Var,
    time_idx: Vec<usize>,
    rope: RopePair<T>,
}

/// Slot roles in generator order for a config.
pub fn slot_roles(cfg: &ModelConfig) -> Vec<SlotRole> {
    let mut r: Vec<SlotRole> = (0..cfg.history).map(SlotRole::History).collect();
    r.extend([SlotRole::Front, SlotRole::Right, SlotRole::Left]);
    r.extend((1..=cfg.future_frames).map(SlotRole::Future));
    r
}

fn role_index(r: SlotRole) -> usize {
    match r {
        SlotRole::History(_) => 0,
        SlotRole::Front => 1,
        SlotRole::Right => 2,
        SlotRole::Left => 3,
        SlotRole::Future(_) => 4,
    }
}

impl Dit {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<T, R>, cfg: &ModelConfig) -> Result<Self> {
        let roles = slot_roles(cfg);
        let coords = assign_rope_coords(&roles, cfg.grid(), cfg.grid())?;
        let angles = rope_angles(&coords, cfg.dim / cfg.heads, cfg.rope_base)?;
        let d = cfg.dim;
        let built = b.scoped("dit", |b| {
            let mut blocks = Vec::new();
            for i in 0..cfg.dit_blocks {
                blocks.push(b.scoped(&format!("block{i}"), |b| {
                    Ok(DitBlock {
                        ada: Linear::zeroed(b, "ada", d, 6 * d)?,
                        attn: MultiHeadAttention::new(b, "attn", d, d, cfg.heads)?,
                        ln_cross: LayerNorm::new(b, "ln_cross", d)?,
                        cross: MultiHeadAttention::new(b, "cross", d, d, cfg.heads)?,
                        mlp: Mlp::new(b, "mlp", d, cfg.mlp_hidden(), d)?,
                    })
                })?);
            }
            Ok((
                Linear::new(b, "in_proj", cfg.latent_channels, d)?,
                b.param("role_embed", &[5, d], Init::Normal(0.1))?,
                TimestepEmbedder::new(b, "t_embed", cfg.freq_dim, d)?,
                blocks,
                Linear::zeroed(b, "final_ada", d, 2 * d)?,
                Linear::zeroed(b, "out", d, cfg.latent_channels)?,
            ))
        })?;
        let (in_proj, role_embed, t_embed, blocks, final_ada, out) = built;
        Ok(Self {
            in_proj,
            role_embed,
            t_embed,
            blocks,
            final_ada,
            out,
            roles,
            angles,
            tokens_per_frame: cfg.tokens_per_frame(),
            channels: cfg.latent_channels,
            dim: d,
            heads: cfg.heads,
        })
    }

    pub fn roles(&self) -> &[SlotRole] {
        &self.roles
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.roles.len() * self.tokens_per_frame
    }

    pub fn future_slots(&self) -> usize {
        self.roles.iter().filter(|r| matches!(r, SlotRole::Future(_))).count()
    }

    /// Rows of the future slots within the token sequence.
    pub fn future_rows(&self) -> std::ops::Range<usize> {
        let n = self.num_tokens();
        n - self.future_slots() * self.tokens_per_frame..n
    }

    /// Embeds `latents` (`[slots·h·w, c]`, slots in generator order) and
    /// prepares per-token modulation for flow time `t`.
    pub fn begin<T: Scalar>(&self, g: &mut Graph<'_, T>, latents: Var, t: f64) -> Result<DitState<T>> {
        let n = self.num_tokens();
        if g.shape(latents) != [n, self.channels] {
            return Err(ModelError::Shape(format!(
                "generator expects latents [{n}, {}], got {:?}",
                self.channels,
                g.shape(latents)
            )));
        }
        let mut role_idx = Vec::with_capacity(n);
        let mut time_idx = Vec::with_capacity(n);
        for r in &self.roles {
            let ti = usize::from(matches!(r, SlotRole::Future(_)));
            for _ in 0..self.tokens_per_frame {
                role_idx.push(role_index(*r));
                time_idx.push(ti);
            }
        }
        let h = self.in_proj.forward(g, latents)?;
        let re = g.param(self.role_embed);
        let re = g.gather_rows(re, &role_idx)?;
        let x = g.add(h, re)?;
        let temb = self.t_embed.forward(g, &[0.0, t])?;
        let cond = g.silu(temb);
        let pairs = self.dim / self.heads / 2;
        let table = std::sync::Arc::new(navworld_numerics::RopeTable::from_angles(n, pairs, &self.angles));
        Ok(DitState {
            x,
            next: 0,
            cond,
            time_idx,
            rope: RopePair {
                q: table.clone(),
                k: table,
            },
        })
    }

    /// Runs block `state.next` and advances.
    pub fn step_block<T: Scalar>(&self, g: &mut Graph<'_, T>, state: &mut DitState<T>, ctx: &ContextEmbedding) -> Result<()> {
        let blk = &self.blocks[state.next];
        let d = self.dim;
        let m = blk.ada.forward(g, state.cond)?;
        let m = g.gather_rows(m, &state.time_idx)?;
        let chunk = |g: &mut Graph<'_, T>, i: usize| g.slice_cols(m, i * d, d);
        let (sh1, sc1, g1) = (chunk(g, 0)?, chunk(g, 1)?, chunk(g, 2)?);
        let (sh2, sc2, g2) = (chunk(g, 3)?, chunk(g, 4)?, chunk(g, 5)?);

        let mut x = state.x;
        let h = norm(g, x)?;
        let h = modulate(g, h, sh1, sc1)?;
        let a = blk.attn.forward(g, h, h, None, Some(&state.rope))?;
        let a = g.mul(a, g1)?;
        x = g.add(x, a)?;

        let h = blk.ln_cross.forward(g, x)?;
        let c = blk.cross.forward(g, h, ctx.tokens, Some(&ctx.key_mask), None)?;
        x = g.add(x, c)?;

        let h = norm(g, x)?;
        let h = modulate(g, h, sh2, sc2)?;
        let f = blk.mlp.forward(g, h)?;
        let f = g.mul(f, g2)?;
        state.x = g.add(x, f)?;
        state.next += 1;
        Ok(())
    }

    /// Runs blocks until `state.next == upto`.
    pub fn advance_to<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        state: &mut DitState<T>,
        ctx: &ContextEmbedding,
        upto: usize,
    ) -> Result<()> {
        while state.next < upto.min(self.blocks.len()) {
            self.step_block(g, state, ctx)?;
        }
        Ok(())
    }

    /// Finishes the remaining blocks and returns the velocity of the future
    /// slots, `[F·h·w, c]`.
    pub fn finish<T: Scalar>(&self, g: &mut Graph<'_, T>, mut state: DitState<T>, ctx: &ContextEmbedding) -> Result<Var> {
        self.advance_to(g, &mut state, ctx, self.blocks.len())?;
        let rows: Vec<usize> = self.future_rows().collect();
        let x = g.gather_rows(state.x, &rows)?;
        let fut_t = g.gather_rows(state.cond, &[1])?;
        let m = self.final_ada.forward(g, fut_t)?;
        let shift = g.slice_cols(m, 0, self.dim)?;
        let scale = g.slice_cols(m, self.dim, self.dim)?;
        let h = norm(g, x)?;
        let h = modulate(g, h, shift, scale)?;
        Ok(self.out.forward(g, h)?)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, latents: Var, t: f64, ctx: &ContextEmbedding) -> Result<Var> {
        let state = self.begin(g, latents, t)?;
        self.finish(g, state, ctx)
    }
}
