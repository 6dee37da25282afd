//! Flow-matching action head.
//!
//! `N` noisy action rows are embedded to `D` and pass through blocks that
//! alternate self-attention (even indices) and cross-attention to the context
//! (odd indices), each followed by an MLP, all under adaLN-Zero modulation
//! from the flow time. The output is one velocity row per action step.
//! Fusion with the video stream is orchestrated by
//! [`NavModel`](crate::NavModel); this module exposes the block-level steps.

use navworld_numerics::nn::{modulate, norm};
use navworld_numerics::{Builder, Graph, Init, Linear, Mlp, MultiHeadAttention, ParamId, Scalar, TimestepEmbedder, Var};
use rand::Rng;

use crate::config::ModelConfig;
use crate::planner::ContextEmbedding;
use crate::{ModelError, Result};

#[derive(Debug, Clone)]
pub struct PolicyBlock {
    pub ada: Linear,
    pub attn: MultiHeadAttention,
    pub mlp: Mlp,
    pub cross: bool,
}

#[derive(Debug, Clone)]
pub struct DiffusionPolicy {
    pub in_proj: Linear,
    pub pos: ParamId,
    pub t_embed: TimestepEmbedder,
    pub blocks: Vec<PolicyBlock>,
    pub final_ada: Linear,
    pub out: Linear,
    horizon: usize,
    dim: usize,
}

pub struct PolicyState {
    pub x: Var,
    pub next: usize,
    cond: Var,
}

impl DiffusionPolicy {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<T, R>, cfg: &ModelConfig) -> navworld_numerics::Result<Self> {
        let d = cfg.dim;
        b.scoped("policy", |b| {
            let mut blocks = Vec::new();
            for i in 0..cfg.policy_blocks {
                blocks.push(b.scoped(&format!("block{i}"), |b| {
                    Ok(PolicyBlock {
                        ada: Linear::zeroed(b, "ada", d, 6 * d)?,
                        attn: MultiHeadAttention::new(b, "attn", d, d, cfg.heads)?,
                        mlp: Mlp::new(b, "mlp", d, cfg.mlp_hidden(), d)?,
                        cross: i % 2 == 1,
                    })
                })?);
            }
            Ok(Self {
                in_proj: Linear::new(b, "in_proj", 5, d)?,
                pos: b.param("pos", &[cfg.horizon, d], Init::Normal(0.1))?,
                t_embed: TimestepEmbedder::new(b, "t_embed", cfg.freq_dim, d)?,
                blocks,
                final_ada: Linear::zeroed(b, "final_ada", d, 2 * d)?,
                out: Linear::zeroed(b, "out", d, 5)?,
                horizon: cfg.horizon,
                dim: d,
            })
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn begin<T: Scalar>(&self, g: &mut Graph<'_, T>, actions: Var, t: f64) -> Result<PolicyState> {
        if g.shape(actions) != [self.horizon, 5] {
            return Err(ModelError::Shape(format!(
                "policy expects actions [{}, 5], got {:?}",
                self.horizon,
                g.shape(actions)
            )));
        }
        let h = self.in_proj.forward(g, actions)?;
        let p = g.param(self.pos);
        let x = g.add(h, p)?;
        let temb = self.t_embed.forward(g, &[t])?;
        let cond = g.silu(temb);
        Ok(PolicyState { x, next: 0, cond })
    }

    pub fn step_block<T: Scalar>(&self, g: &mut Graph<'_, T>, state: &mut PolicyState, ctx: &ContextEmbedding) -> Result<()> {
        let blk = &self.blocks[state.next];
        let d = self.dim;
        let m = blk.ada.forward(g, state.cond)?;
        let chunk = |g: &mut Graph<'_, T>, i: usize| g.slice_cols(m, i * d, d);
        let (sh1, sc1, g1) = (chunk(g, 0)?, chunk(g, 1)?, chunk(g, 2)?);
        let (sh2, sc2, g2) = (chunk(g, 3)?, chunk(g, 4)?, chunk(g, 5)?);

        let mut x = state.x;
        let h = norm(g, x)?;
        let h = modulate(g, h, sh1, sc1)?;
        let a = if blk.cross {
            blk.attn.forward(g, h, ctx.tokens, Some(&ctx.key_mask), None)?
        } else {
            blk.attn.forward(g, h, h, None, None)?
        };
        let a = g.mul(a, g1)?;
        x = g.add(x, a)?;

        let h = norm(g, x)?;
        let h = modulate(g, h, sh2, sc2)?;
        let f = blk.mlp.forward(g, h)?;
        let f = g.mul(f, g2)?;
        state.x = g.add(x, f)?;
        state.next += 1;
        Ok(())
    }

    /// `[N, 5]` velocity from the final hidden state.
    pub fn finish<T: Scalar>(&self, g: &mut Graph<'_, T>, state: PolicyState) -> Result<Var> {
        let m = self.final_ada.forward(g, state.cond)?;
        let shift = g.slice_cols(m, 0, self.dim)?;
        let scale = g.slice_cols(m, self.dim, self.dim)?;
        let h = norm(g, state.x)?;
        let h = modulate(g, h, shift, scale)?;
        Ok(self.out.forward(g, h)?)
    }
}
