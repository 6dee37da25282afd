//! Bidirectional cross-attention between the action and video streams.
//!
//! ```text
//! a' = a + Attn(q = a, kv = v)
//! v' = v + Attn(q = v, kv = a)
//! ```
//!
//! Both directions read the inputs from before the exchange. The output
//! projections start at zero, so a fresh tap is the identity.

use navworld_numerics::{Builder, Graph, Linear, MultiHeadAttention, Scalar, Var};
use rand::Rng;

use crate::Result;

#[derive(Debug, Clone)]
pub struct FusionTap {
    /// Action queries over video keys/values.
    pub a2v: MultiHeadAttention,
    /// Video queries over action keys/values.
    pub v2a: MultiHeadAttention,
}

fn zero_out_attention<T: Scalar, R: Rng>(
    b: &mut Builder<T, R>,
    name: &str,
    dim: usize,
    heads: usize,
) -> navworld_numerics::Result<MultiHeadAttention> {
    b.scoped(name, |b| {
        Ok(MultiHeadAttention {
            q: Linear::new(b, "q", dim, dim)?,
            k: Linear::new(b, "k", dim, dim)?,
            v: Linear::new(b, "v", dim, dim)?,
            o: Linear::zeroed(b, "o", dim, dim)?,
            heads,
            dim,
        })
    })
}

impl FusionTap {
    pub fn new<T: Scalar, R: Rng>(
        b: &mut Builder<T, R>,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> navworld_numerics::Result<Self> {
        b.scoped(name, |b| {
            Ok(Self {
                a2v: zero_out_attention(b, "a2v", dim, heads)?,
                v2a: zero_out_attention(b, "v2a", dim, heads)?,
            })
        })
    }

    /// Returns the updated `(action, video)` token states.
    pub fn exchange<T: Scalar>(&self, g: &mut Graph<'_, T>, action: Var, video: Var) -> Result<(Var, Var)> {
        let da = self.a2v.forward(g, action, video, None, None)?;
        let dv = self.v2a.forward(g, video, action, None, None)?;
        Ok((g.add(action, da)?, g.add(video, dv)?))
    }
}
