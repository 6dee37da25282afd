//! Instruction + observation encoder producing the context sequence `C`.
//!
//! Token layout of `C` (fixed by the config):
//!
//! | range | content |
//! |---|---|
//! | `0 .. max_instruction` | instruction tokens, padded; padding is masked |
//! | then `k` groups of `(V/P)²` | history front frames, oldest first |
//! | then 3 groups of `(V/P)²` | current front, left, right views |

use navworld_numerics::{Builder, Graph, Init, LayerNorm, Linear, ParamId, Scalar, Tensor, Var};
use navworld_sim::tokenizer::PAD;
use navworld_sim::Frame;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{patchify, EncoderBlock};
use crate::config::ModelConfig;
use crate::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum View {
    Front,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Instruction,
    History(usize),
    Current(View),
}

/// Output of the planner: an `L × D` sequence with per-token segment tags.
#[derive(Debug, Clone)]
pub struct ContextEmbedding {
    pub tokens: Var,
    pub len: usize,
    pub dim: usize,
    pub segments: Vec<Segment>,
    /// `false` marks padding that attention must ignore.
    pub key_mask: Vec<bool>,
}

/// One planner query: instruction ids, `k` past front frames and the current
/// `[left, front, right]` views.
#[derive(Debug, Clone, Copy)]
pub struct PlannerInput<'a> {
    pub tokens: &'a [u32],
    pub history: &'a [&'a Frame],
    pub current: [&'a Frame; 3],
}

#[derive(Debug, Clone)]
pub struct Planner {
    pub embed: ParamId,
    pub instr_pos: ParamId,
    pub patch: Linear,
    pub patch_pos: ParamId,
    pub time: ParamId,
    pub view: ParamId,
    pub blocks: Vec<EncoderBlock>,
    pub ln_out: LayerNorm,
    cfg: ModelConfig,
}

/// Segment tags of every context position for a config.
pub fn segment_layout(cfg: &ModelConfig) -> Vec<Segment> {
    let tpf = cfg.tokens_per_frame();
    let mut s = vec![Segment::Instruction; cfg.max_instruction];
    for j in 0..cfg.history {
        s.extend(std::iter::repeat_n(Segment::History(j), tpf));
    }
    for v in [View::Front, View::Left, View::Right] {
        s.extend(std::iter::repeat_n(Segment::Current(v), tpf));
    }
    s
}

impl Planner {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<T, R>, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.dim;
        b.scoped("planner", |b| {
            let blocks = (0..cfg.planner_blocks)
                .map(|i| EncoderBlock::new(b, &format!("block{i}"), d, cfg.heads, cfg.mlp_hidden()))
                .collect::<navworld_numerics::Result<Vec<_>>>()?;
            Ok(Self {
                embed: b.param("embed", &[cfg.vocab, d], Init::Normal(0.3))?,
                instr_pos: b.param("instr_pos", &[cfg.max_instruction, d], Init::Normal(0.1))?,
                patch: Linear::new(b, "patch", cfg.patch_dim(), d)?,
                patch_pos: b.param("patch_pos", &[cfg.tokens_per_frame(), d], Init::Normal(0.1))?,
                time: b.param("time", &[cfg.history + 1, d], Init::Normal(0.1))?,
                view: b.param("view", &[3, d], Init::Normal(0.1))?,
                blocks,
                ln_out: LayerNorm::new(b, "ln_out", d)?,
                cfg: cfg.clone(),
            })
        })
        .map_err(ModelError::from)
    }

    pub fn encode_context<T: Scalar>(&self, g: &mut Graph<'_, T>, input: &PlannerInput<'_>) -> Result<ContextEmbedding> {
        let cfg = &self.cfg;
        let (li, tpf, v) = (cfg.max_instruction, cfg.tokens_per_frame(), cfg.resolution);
        if input.history.len() != cfg.history {
            return Err(ModelError::Shape(format!(
                "planner expects {} history frames, got {}",
                cfg.history,
                input.history.len()
            )));
        }
        let frames: Vec<&Frame> = input
            .history
            .iter()
            .copied()
            .chain([input.current[1], input.current[0], input.current[2]])
            .collect();
        for f in &frames {
            if f.res != v || f.data.len() != v * v * 3 {
                return Err(ModelError::Shape(format!("frame resolution {} does not match {v}", f.res)));
            }
        }

        // Instruction: truncate or pad to the fixed length.
        let mut ids: Vec<usize> = input
            .tokens
            .iter()
            .take(li)
            .map(|&t| (t as usize).min(cfg.vocab - 1))
            .collect();
        let mut key_mask = vec![true; ids.len()];
        while ids.len() < li {
            ids.push(PAD as usize);
            key_mask.push(false);
        }
        let table = g.param(self.embed);
        let words = g.gather_rows(table, &ids)?;
        let pos = g.param(self.instr_pos);
        let instr = g.add(words, pos)?;

        // Frames: one projection for all patches, then position/time/view tags.
        let nf = frames.len();
        let mut patches = Vec::with_capacity(nf * tpf * cfg.patch_dim());
        for f in &frames {
            patches.extend(patchify(&f.data, v, cfg.patch));
        }
        let px = g.constant(Tensor::from_f64(&[nf * tpf, cfg.patch_dim()], &patches)?);
        let emb = self.patch.forward(g, px)?;
        let k = cfg.history;
        let mut pos_idx = Vec::with_capacity(nf * tpf);
        let mut time_idx = Vec::with_capacity(nf * tpf);
        let mut view_idx = Vec::with_capacity(nf * tpf);
        for fi in 0..nf {
            let (t, view) = if fi < k { (fi, 0) } else { (k, fi - k) };
            for p in 0..tpf {
                pos_idx.push(p);
                time_idx.push(t);
                view_idx.push(view);
            }
        }
        let pp = g.param(self.patch_pos);
        let pp = g.gather_rows(pp, &pos_idx)?;
        let tt = g.param(self.time);
        let tt = g.gather_rows(tt, &time_idx)?;
        let vv = g.param(self.view);
        let vv = g.gather_rows(vv, &view_idx)?;
        let mut fx = g.add(emb, pp)?;
        fx = g.add(fx, tt)?;
        fx = g.add(fx, vv)?;

        let mut x = g.concat_rows(&[instr, fx])?;
        key_mask.extend(std::iter::repeat_n(true, nf * tpf));
        for blk in &self.blocks {
            x = blk.forward(g, x, Some(&key_mask))?;
        }
        let x = self.ln_out.forward(g, x)?;
        Ok(ContextEmbedding {
            tokens: x,
            len: li + nf * tpf,
            dim: cfg.dim,
            segments: segment_layout(cfg),
            key_mask,
        })
    }
}
