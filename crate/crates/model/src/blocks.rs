use navworld_numerics::{Builder, Graph, LayerNorm, Mlp, MultiHeadAttention, Scalar, Var};
use rand::Rng;

use navworld_numerics::Result;

/// Pre-norm transformer encoder block.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl EncoderBlock {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<T, R>, name: &str, dim: usize, heads: usize, hidden: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Self {
                ln1: LayerNorm::new(b, "ln1", dim)?,
                attn: MultiHeadAttention::new(b, "attn", dim, dim, heads)?,
                ln2: LayerNorm::new(b, "ln2", dim)?,
                mlp: Mlp::new(b, "mlp", dim, hidden, dim)?,
            })
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let h = self.ln1.forward(g, x)?;
        let a = self.attn.forward(g, h, h, mask, None)?;
        let x = g.add(x, a)?;
        let h = self.ln2.forward(g, x)?;
        let m = self.mlp.forward(g, h)?;
        g.add(x, m)
    }
}

/// Splits a frame into non-overlapping `patch × patch` tiles, one row per tile
/// in raster order, each row ordered `(dy, dx, channel)`.
pub fn patchify(data: &[f32], res: usize, patch: usize) -> Vec<f64> {
    let g = res / patch;
    let mut out = Vec::with_capacity(data.len());
    for pr in 0..g {
        for pc in 0..g {
            for dy in 0..patch {
                for dx in 0..patch {
                    let k = ((pr * patch + dy) * res + pc * patch + dx) * 3;
                    out.extend(data[k..k + 3].iter().map(|&v| v as f64));
                }
            }
        }
    }
    out
}

/// Inverse of [`patchify`].
pub fn unpatchify(rows: &[f64], res: usize, patch: usize) -> Vec<f32> {
    let g = res / patch;
    let mut out = vec![0f32; res * res * 3];
    let mut it = rows.iter();
    for pr in 0..g {
        for pc in 0..g {
            for dy in 0..patch {
                for dx in 0..patch {
                    let k = ((pr * patch + dy) * res + pc * patch + dx) * 3;
                    for c in 0..3 {
                        out[k + c] = *it.next().expect("row count matches frame") as f32;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patchify_round_trip() {
        let data: Vec<f32> = (0..8 * 8 * 3).map(|i| i as f32 / 7.0).collect();
        let rows = patchify(&data, 8, 4);
        assert_eq!(rows.len(), data.len());
        // First row begins with pixel (0, 0), then (0, 1).
        assert_eq!(rows[3], data[3] as f64);
        assert_eq!(unpatchify(&rows, 8, 4), data);
    }
}
