//! Query-based deterministic action head and its loss.

use navworld_geometry::{encode_action, ActionStep};
use navworld_numerics::{Builder, Graph, Init, LayerNorm, Linear, Mlp, ParamId, Scalar, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::EncoderBlock;
use crate::config::ModelConfig;
use crate::planner::ContextEmbedding;
use crate::{ModelError, Result};

/// `N` learnable queries processed jointly with the context; the refined
/// queries pass through a row-wise MLP head to `(x, y, cos θ, sin θ, α-logit)`.
#[derive(Debug, Clone)]
pub struct ActionFormer {
    pub queries: ParamId,
    pub ctx_proj: Linear,
    pub blocks: Vec<EncoderBlock>,
    pub ln_out: LayerNorm,
    pub head: Mlp,
    horizon: usize,
}

impl ActionFormer {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<T, R>, cfg: &ModelConfig) -> navworld_numerics::Result<Self> {
        let d = cfg.dim;
        b.scoped("former", |b| {
            Ok(Self {
                queries: b.param("queries", &[cfg.horizon, d], Init::Normal(0.5))?,
                ctx_proj: Linear::new(b, "ctx_proj", d, d)?,
                blocks: (0..cfg.former_blocks)
                    .map(|i| EncoderBlock::new(b, &format!("block{i}"), d, cfg.heads, cfg.mlp_hidden()))
                    .collect::<navworld_numerics::Result<_>>()?,
                ln_out: LayerNorm::new(b, "ln_out", d)?,
                head: Mlp::new(b, "head", d, d, 5)?,
                horizon: cfg.horizon,
            })
        })
    }

    /// Refined query states before the head, `[N, D]`.
    pub fn refine<T: Scalar>(&self, g: &mut Graph<'_, T>, ctx: &ContextEmbedding) -> Result<Var> {
        let q = g.param(self.queries);
        let c = self.ctx_proj.forward(g, ctx.tokens)?;
        let mut x = g.concat_rows(&[q, c])?;
        let mut mask = vec![true; self.horizon];
        mask.extend_from_slice(&ctx.key_mask);
        for blk in &self.blocks {
            x = blk.forward(g, x, Some(&mask))?;
        }
        let rows: Vec<usize> = (0..self.horizon).collect();
        let x = g.gather_rows(x, &rows)?;
        Ok(self.ln_out.forward(g, x)?)
    }

    /// Row-wise head applied to refined queries.
    pub fn head<T: Scalar>(&self, g: &mut Graph<'_, T>, refined: Var) -> Result<Var> {
        Ok(self.head.forward(g, refined)?)
    }

    /// `[N, 5]` action rows.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, ctx: &ContextEmbedding) -> Result<Var> {
        let r = self.refine(g, ctx)?;
        self.head(g, r)
    }
}

/// How the predicted `(cos, sin)` pair enters the angle loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AngleMode {
    /// The dot product of the raw outputs with the target direction.
    #[default]
    Raw,
    /// The prediction is scaled to unit length first.
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub pos: f64,
    pub angle: f64,
    pub arrive: f64,
    pub angle_mode: AngleMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pos: 1.0,
            angle: 1.0,
            arrive: 1.0,
            angle_mode: AngleMode::Raw,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FormerLoss {
    pub pos: Var,
    pub angle: Var,
    pub arrive: Var,
    pub total: Var,
}

/// Position L1, direction cosine and arrival cross-entropy terms over `N`
/// steps, and their weighted sum:
///
/// ```text
/// L_pos    = (1/N) Σ |x − x*| + |y − y*|
/// L_angle  = 1 − (1/N) Σ (c·cos θ* + s·sin θ*)
/// L_arrive = (1/N) Σ BCE(logit, α*)
/// ```
pub fn former_loss<T: Scalar>(g: &mut Graph<'_, T>, pred: Var, gt: &[ActionStep], w: &LossWeights) -> Result<FormerLoss> {
    let n = gt.len();
    if g.shape(pred) != [n, 5] {
        return Err(ModelError::Shape(format!(
            "prediction {:?} does not match {n} ground-truth steps",
            g.shape(pred)
        )));
    }
    let enc: Vec<[f64; 5]> = gt.iter().map(|a| encode_action(a).to_array()).collect();
    let col = |k: usize, w: usize| -> Vec<f64> { enc.iter().flat_map(|r| r[k..k + w].to_vec()).collect() };
    let inv_n = 1.0 / n as f64;

    let xy = g.slice_cols(pred, 0, 2)?;
    let xy_t = g.constant(Tensor::from_f64(&[n, 2], &col(0, 2))?);
    let d = g.sub(xy, xy_t)?;
    let d = g.abs(d);
    let s = g.sum(d);
    let pos = g.scale(s, inv_n);

    let mut cs = g.slice_cols(pred, 2, 2)?;
    if w.angle_mode == AngleMode::Normalized {
        let sq = g.square(cs);
        let ones = g.constant(Tensor::full(&[2, 1], T::one()));
        let r = g.matmul(sq, ones)?;
        let r = g.add_scalar(r, 1e-12);
        let r = g.sqrt(r);
        cs = g.div(cs, r)?;
    }
    let cs_t = g.constant(Tensor::from_f64(&[n, 2], &col(2, 2))?);
    let dot = g.mul(cs, cs_t)?;
    let dot = g.sum(dot);
    let dot = g.scale(dot, -inv_n);
    let angle = g.add_scalar(dot, 1.0);

    let logits = g.slice_cols(pred, 4, 1)?;
    let targets: Vec<T> = enc.iter().map(|r| T::lit(r[4])).collect();
    let arrive = g.bce_with_logits(logits, &targets)?;

    let a = g.scale(pos, w.pos);
    let b = g.scale(angle, w.angle);
    let c = g.scale(arrive, w.arrive);
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    Ok(FormerLoss {
        pos,
        angle,
        arrive,
        total,
    })
}
