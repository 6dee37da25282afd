//! Rectified-flow helpers shared by the video and action streams.
//!
//! Data sits at `t = 0` and noise at `t = 1`: `z_t = (1 − t)·z + t·ε` and the
//! regression target is the constant velocity `ε − z`. Sampling integrates
//! from `t = 1` down to `0` with `z ← z − Δt·v`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn interpolate(z: &[f64], eps: &[f64], t: f64) -> Vec<f64> {
    z.iter().zip(eps).map(|(&z, &e)| (1.0 - t) * z + t * e).collect()
}

pub fn velocity_target(z: &[f64], eps: &[f64]) -> Vec<f64> {
    z.iter().zip(eps).map(|(&z, &e)| e - z).collect()
}

pub fn euler_step(z: &mut [f64], v: &[f64], dt: f64) {
    for (z, &v) in z.iter_mut().zip(v) {
        *z -= dt * v;
    }
}

/// `steps + 1` uniformly spaced times from 1 down to 0.
pub fn time_grid(steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| 1.0 - i as f64 / steps as f64).collect()
}

/// Uniform draw from the open interval (0, 1).
pub fn sample_time<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let t: f64 = rng.gen();
        if t > 0.0 {
            return t;
        }
    }
}

pub fn gaussian<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}
