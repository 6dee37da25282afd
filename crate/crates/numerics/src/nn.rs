//! Transformer building blocks expressed over [`Graph`] operations.

use std::sync::Arc;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::graph::{Graph, RopeTable, Var};
use crate::params::{Builder, Init, ParamId};
use crate::tensor::{Scalar, Tensor};

/// `y = x W + b` with `W` stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<T, R>, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Self {
                weight: b.param("weight", &[in_dim, out_dim], Init::FanIn(in_dim))?,
                bias: Some(b.param("bias", &[out_dim], Init::Zeros)?),
                in_dim,
                out_dim,
            })
        })
    }

    pub fn no_bias<T: Scalar, R: Rng>(b: &mut Builder<T, R>, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Self {
                weight: b.param("weight", &[in_dim, out_dim], Init::FanIn(in_dim))?,
                bias: None,
                in_dim,
                out_dim,
            })
        })
    }

    /// Weight and bias start at zero, so the layer outputs zeros until trained.
    pub fn zeroed<T: Scalar, R: Rng>(b: &mut Builder<T, R>, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Self {
                weight: b.param("weight", &[in_dim, out_dim], Init::Zeros)?,
                bias: Some(b.param("bias", &[out_dim], Init::Zeros)?),
                in_dim,
                out_dim,
            })
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<T, R>, name: &str, dim: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Self {
                gamma: b.param("gamma", &[dim], Init::Ones)?,
                beta: b.param("beta", &[dim], Init::Zeros)?,
            })
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let gm = g.param(self.gamma);
        let bt = g.param(self.beta);
        g.layer_norm(x, Some(gm), Some(bt))
    }
}

/// Two-layer perceptron with a GELU in between.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<T, R>, name: &str, dim: usize, hidden: usize, out: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Self {
                fc1: Linear::new(b, "fc1", dim, hidden)?,
                fc2: Linear::new(b, "fc2", hidden, out)?,
            })
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, h)
    }
}

/// Rotations applied to queries and keys before the dot product.
#[derive(Clone)]
pub struct RopePair<T> {
    pub q: Arc<RopeTable<T>>,
    pub k: Arc<RopeTable<T>>,
}

/// Multi-head attention with separate query and key/value inputs. Passing the
/// same `Var` for both gives self-attention.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<T, R>, name: &str, dim: usize, kv_dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(invalid(
                "multi_head_attention",
                format!("dimension {dim} is not divisible by {heads} heads"),
            ));
        }
        b.scoped(name, |b| {
            Ok(Self {
                q: Linear::new(b, "q", dim, dim)?,
                k: Linear::new(b, "k", kv_dim, dim)?,
                v: Linear::new(b, "v", kv_dim, dim)?,
                o: Linear::new(b, "o", dim, dim)?,
                heads,
                dim,
            })
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        q_input: Var,
        kv_input: Var,
        mask: Option<&[bool]>,
        rope: Option<&RopePair<T>>,
    ) -> Result<Var> {
        let mut q = self.q.forward(g, q_input)?;
        let mut k = self.k.forward(g, kv_input)?;
        let v = self.v.forward(g, kv_input)?;
        if let Some(r) = rope {
            q = g.rope(q, self.heads, r.q.clone())?;
            k = g.rope(k, self.heads, r.k.clone())?;
        }
        let a = g.attention(q, k, v, self.heads, mask)?;
        self.o.forward(g, a)
    }
}

/// Sinusoidal embedding of a diffusion time `t ∈ [0, 1]`:
/// `e[j] = sin(1000·t·ω_j)`, `e[half + j] = cos(1000·t·ω_j)` with
/// `ω_j = 10000^(-j/half)` and `half = dim / 2`.
pub fn timestep_embed(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(invalid(
            "timestep_embed",
            format!("dimension must be even and positive, got {dim}"),
        ));
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for j in 0..half {
        let w = (-(10000f64.ln()) * j as f64 / half as f64).exp();
        let a = 1000.0 * t * w;
        out[j] = a.sin();
        out[half + j] = a.cos();
    }
    Ok(out)
}

/// Sinusoidal features followed by a shared two-layer SiLU perceptron.
#[derive(Debug, Clone)]
pub struct TimestepEmbedder {
    pub freq_dim: usize,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TimestepEmbedder {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<T, R>, name: &str, freq_dim: usize, dim: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Self {
                freq_dim,
                fc1: Linear::new(b, "fc1", freq_dim, dim)?,
                fc2: Linear::new(b, "fc2", dim, dim)?,
            })
        })
    }

    /// One embedding row per entry of `ts`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, ts: &[f64]) -> Result<Var> {
        let mut feats = Vec::with_capacity(ts.len() * self.freq_dim);
        for &t in ts {
            feats.extend(timestep_embed(t, self.freq_dim)?);
        }
        let x = g.constant(Tensor::from_f64(&[ts.len(), self.freq_dim], &feats)?);
        let h = self.fc1.forward(g, x)?;
        let h = g.silu(h);
        self.fc2.forward(g, h)
    }
}

/// `x * (1 + scale) + shift`, the adaptive layer-norm modulation used by DiT blocks.
pub fn modulate<T: Scalar>(g: &mut Graph<'_, T>, x: Var, shift: Var, scale: Var) -> Result<Var> {
    let s1 = g.add_scalar(scale, 1.0);
    let y = g.mul(x, s1)?;
    g.add(y, shift)
}

/// Plain layer normalization without affine parameters.
pub fn norm<T: Scalar>(g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
    g.layer_norm(x, None, None)
}
