//! Central finite-difference oracle for analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{NumericsError, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |numeric|)` over all checked coordinates.
    pub max_rel_err: f64,
    /// Parameter holding the worst coordinate.
    pub worst_param: String,
    pub coords_checked: usize,
}

/// Compares backprop gradients of the scalar returned by `f` with central
/// differences of step `eps`. Every trainable coordinate is checked unless
/// `max_coords_per_param` caps it, in which case a random subset (drawn from
/// `rng`) is used. Frozen parameters must report an exactly zero gradient.
pub fn grad_check<R, F>(
    store: &mut ParamStore<f64>,
    eps: f64,
    max_coords_per_param: Option<usize>,
    rng: &mut R,
    f: F,
) -> Result<GradCheckReport>
where
    R: Rng + ?Sized,
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let analytic: Vec<(usize, Vec<f64>)> = {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        let lv = g.value(loss).data()[0];
        if !lv.is_finite() {
            return Err(NumericsError::NonFinite { name: "<loss>".into() });
        }
        let grads = g.backward(loss)?;
        store
            .ids()
            .map(|id| {
                let n = store.value(id).len();
                let gr = grads.param(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; n]);
                (id.index(), gr)
            })
            .collect()
    };

    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        Ok(g.value(loss).data()[0])
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        coords_checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for (id, (_, ana)) in ids.into_iter().zip(analytic) {
        let name = store.get(id).name.clone();
        if ana.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite { name });
        }
        if !store.get(id).trainable {
            if ana.iter().any(|&x| x != 0.0) {
                return Err(NumericsError::InvalidArgument {
                    op: "grad_check",
                    msg: format!("frozen parameter `{name}` received a gradient"),
                });
            }
            continue;
        }
        let n = ana.len();
        let coords: Vec<usize> = match max_coords_per_param {
            Some(k) if k < n => sample(rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = store.value(id).data()[c];
            store.get_mut(id).value.data_mut()[c] = orig + eps;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[c] = orig - eps;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[c] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(NumericsError::NonFinite { name });
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (ana[c] - numeric).abs() / numeric.abs().max(1.0);
            report.coords_checked += 1;
            if rel > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = rel.max(report.max_rel_err);
                report.worst_param = name.clone();
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    #[test]
    fn quadratic_at_three() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(3.0), false).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        {
            let mut g = Graph::new(&store);
            let xv = g.param(x);
            let y = g.square(xv);
            assert_eq!(g.backward(y).unwrap().param(x).unwrap()[0], 6.0);
        }
        let rep = grad_check(&mut store, 1e-5, None, &mut rng, |g| {
            let xv = g.param(x);
            Ok(g.square(xv))
        })
        .unwrap();
        assert!(rep.max_rel_err <= 1e-9, "{}", rep.max_rel_err);
    }

    #[test]
    fn frozen_parameter_gets_zero() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(3.0), false).unwrap();
        let y = store.add("y", Tensor::scalar(2.0), false).unwrap();
        store.get_mut(y).trainable = false;
        let mut g = Graph::new(&store);
        let (xv, yv) = (g.param(x), g.param(y));
        let p = g.mul(xv, yv).unwrap();
        let grads = g.backward(p).unwrap();
        assert_eq!(grads.param(x).unwrap(), &[2.0]);
        assert!(grads.param(y).is_none());
        drop(g);
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        let rep = grad_check(&mut store, 1e-5, None, &mut rng, |g| {
            let (xv, yv) = (g.param(x), g.param(y));
            g.mul(xv, yv)
        })
        .unwrap();
        assert_eq!(rep.coords_checked, 1);
    }

    #[test]
    fn non_finite_reports_name() {
        let mut store = ParamStore::new();
        // sqrt at 0: finite loss, infinite derivative.
        let x = store.add("weights.bad", Tensor::scalar(0.0), false).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        let err = grad_check(&mut store, 1e-5, None, &mut rng, |g| {
            let xv = g.param(x);
            Ok(g.sqrt(xv))
        })
        .unwrap_err();
        assert!(err.to_string().contains("weights.bad"), "{err}");
    }
}
