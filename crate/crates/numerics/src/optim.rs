//! AdamW with decoupled weight decay and a cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{NumericsError, Result};
use crate::graph::Gradients;
use crate::params::ParamStore;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self { config, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    /// Applies one update to every trainable parameter that received a gradient.
    /// All gradients are checked for finiteness before anything is modified.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        let pg = grads.params();
        for (id, g) in &pg {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(NumericsError::NonFinite {
                    name: store.get(*id).name.clone(),
                });
            }
        }
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let lr_t = T::lit(lr);
        let eps = T::lit(c.eps);
        let (bc1, bc2) = (T::lit(bc1), T::lit(bc2));
        for (id, g) in pg {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let n = p.value.len();
            let decay = if p.decay {
                T::lit(1.0 - lr * c.weight_decay)
            } else {
                T::one()
            };
            let (m, v) = p.moments.get_or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
            let w = p.value.data_mut();
            for i in 0..n {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                w[i] = w[i] * decay - lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Linear warmup followed by cosine decay from `peak` to `floor_frac * peak`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub floor_frac: f64,
    pub warmup: u64,
    pub total: u64,
}

impl LrSchedule {
    pub fn cosine(peak: f64, total: u64) -> Self {
        Self {
            peak,
            floor_frac: 0.1,
            warmup: 0,
            total,
        }
    }

    pub fn at(&self, step: u64) -> f64 {
        let floor = self.peak * self.floor_frac;
        if self.warmup > 0 && step < self.warmup {
            return self.peak * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.total.saturating_sub(self.warmup).max(1);
        let s = step.saturating_sub(self.warmup).min(span) as f64 / span as f64;
        floor + (self.peak - floor) * 0.5 * (1.0 + (std::f64::consts::PI * s).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::Tensor;

    fn scalar_store(x: f64, decay: bool) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("x", Tensor::scalar(x), decay).unwrap();
        s
    }

    fn grads_for(store: &ParamStore<f64>, coeff: f64) -> Gradients<f64> {
        // loss = coeff * x  ⇒  dloss/dx = coeff
        let mut g = Graph::new(store);
        let x = g.param(store.id_of("x").unwrap());
        let l = g.scale(x, coeff);
        g.backward(l).unwrap()
    }

    #[test]
    fn zero_gradient_no_decay_leaves_parameter() {
        let mut store = scalar_store(0.7, true);
        let grads = grads_for(&store, 0.0);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        opt.step(&mut store, &grads, 1e-3).unwrap();
        assert_eq!(store.value(store.id_of("x").unwrap()).data()[0], 0.7);
    }

    #[test]
    fn single_step_matches_hand_computation() {
        // p=1, g=1, lr=0.1, wd=0.01: m̂=1, v̂=1, p ← 1·(1-0.001) - 0.1·1/(1+1e-8)
        let mut store = scalar_store(1.0, true);
        let grads = grads_for(&store, 1.0);
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(&mut store, &grads, 0.1).unwrap();
        let expected = 0.999 - 0.1 / (1.0 + 1e-8);
        let got = store.value(store.id_of("x").unwrap()).data()[0];
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut store = scalar_store(1.0, true);
        let grads = grads_for(&store, f64::NAN);
        let mut opt = AdamW::new(AdamWConfig::default());
        let err = opt.step(&mut store, &grads, 0.1).unwrap_err();
        assert!(err.to_string().contains("`x`"));
        assert_eq!(store.value(store.id_of("x").unwrap()).data()[0], 1.0);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn cosine_endpoints() {
        let s = LrSchedule::cosine(3e-4, 1000);
        assert!((s.at(0) - 3e-4).abs() < 1e-18);
        assert!((s.at(1000) - 3e-5).abs() < 1e-18);
        assert!((s.at(5000) - 3e-5).abs() < 1e-18);
        assert!(s.at(500) < 3e-4 && s.at(500) > 3e-5);
    }
}
