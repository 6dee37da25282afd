//! Learned patch codec between frames and the `h × w × c` latent grid.
//!
//! Encoding is one linear map per `P × P` patch; decoding is its learned
//! inverse. A latent is stored as `h·w` rows of `c` channels, row-major over
//! the grid, matching the token order of the video generator.

use navworld_numerics::{Builder, Graph, Linear, ParamStore, Scalar, Tensor, Var};
use navworld_sim::Frame;
use rand::Rng;

use crate::blocks::{patchify, unpatchify};
use crate::config::ModelConfig;
use crate::{ModelError, Result};

#[derive(Debug, Clone)]
pub struct Codec {
    pub enc: Linear,
    pub dec: Linear,
    res: usize,
    patch: usize,
}

impl Codec {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<T, R>, cfg: &ModelConfig) -> navworld_numerics::Result<Self> {
        b.scoped("codec", |b| {
            Ok(Self {
                enc: Linear::new(b, "enc", cfg.patch_dim(), cfg.latent_channels)?,
                dec: Linear::new(b, "dec", cfg.latent_channels, cfg.patch_dim())?,
                res: cfg.resolution,
                patch: cfg.patch,
            })
        })
    }

    /// Patch rows of several frames stacked, as a constant.
    pub fn pixels<T: Scalar>(&self, g: &mut Graph<'_, T>, frames: &[&Frame]) -> Result<Var> {
        let mut rows = Vec::new();
        for f in frames {
            if f.res != self.res || f.data.len() != self.res * self.res * 3 {
                return Err(ModelError::Shape(format!(
                    "frame resolution {} does not match {}",
                    f.res, self.res
                )));
            }
            rows.extend(patchify(&f.data, self.res, self.patch));
        }
        let pd = self.patch * self.patch * 3;
        Ok(g.constant(Tensor::from_f64(&[rows.len() / pd, pd], &rows)?))
    }

    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, frames: &[&Frame]) -> Result<Var> {
        let px = self.pixels(g, frames)?;
        Ok(self.enc.forward(g, px)?)
    }

    pub fn decode<T: Scalar>(&self, g: &mut Graph<'_, T>, latents: Var) -> Result<Var> {
        Ok(self.dec.forward(g, latents)?)
    }

    /// Pixel MSE of `decode(encode(x))` over the given frames.
    pub fn recon_loss<T: Scalar>(&self, g: &mut Graph<'_, T>, frames: &[&Frame]) -> Result<Var> {
        let px = self.pixels(g, frames)?;
        let z = self.enc.forward(g, px)?;
        let y = self.dec.forward(g, z)?;
        let d = g.sub(y, px)?;
        let sq = g.square(d);
        Ok(g.mean(sq))
    }

    /// Latent of one frame as plain values.
    pub fn encode_frame<T: Scalar>(&self, store: &ParamStore<T>, frame: &Frame) -> Result<Vec<f64>> {
        let mut g = Graph::new(store);
        let z = self.encode(&mut g, &[frame])?;
        Ok(g.value(z).to_f64_vec())
    }

    /// Decoded frame, clamped to `[0, 1]`.
    pub fn decode_frame<T: Scalar>(&self, store: &ParamStore<T>, latent: &[f64]) -> Result<Frame> {
        let mut g = Graph::new(store);
        let c = self.enc.out_dim;
        let z = g.constant(Tensor::from_f64(&[latent.len() / c, c], latent)?);
        let y = self.decode(&mut g, z)?;
        let mut data = unpatchify(&g.value(y).to_f64_vec(), self.res, self.patch);
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Frame { res: self.res, data })
    }
}
