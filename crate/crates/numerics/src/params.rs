//! Named parameter storage shared by every model in a bundle.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{NumericsError, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// First and second moment accumulators; allocated lazily by the optimizer.
    pub moments: Option<(Vec<T>, Vec<T>)>,
    pub trainable: bool,
    /// Whether decoupled weight decay applies (matrices yes, biases and norms no).
    pub decay: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with the given standard deviation.
    Normal(f64),
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>, decay: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(NumericsError::DuplicateParameter(name.to_string()));
        }
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
            moments: None,
            trainable: true,
            decay,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Marks every parameter whose name satisfies `pred` as trainable and freezes the rest.
    pub fn set_trainable_where(&mut self, pred: impl Fn(&str) -> bool) {
        for p in &mut self.params {
            p.trainable = pred(&p.name);
        }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.trainable = trainable;
        }
    }

    /// Overwrites every value with small random noise. Used by gradient checks so
    /// that zero-initialised gates do not hide dead paths.
    pub fn randomize<R: Rng + ?Sized>(&mut self, std: f64, rng: &mut R) {
        for p in &mut self.params {
            let shape = p.value.shape().to_vec();
            p.value = Tensor::randn(&shape, std, rng);
        }
    }

    /// Order-sensitive digest of the named subset of parameters.
    pub fn checksum(&self, pred: impl Fn(&str) -> bool) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for p in self.params.iter().filter(|p| pred(&p.name)) {
            p.name.hash(&mut h);
            for x in p.value.data() {
                x.as_f64().to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Converts every value to another precision. Optimizer state is dropped.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    moments: None,
                    trainable: p.trainable,
                    decay: p.decay,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Scoped parameter constructor: `builder.push("block0").linear(...)` yields
/// names such as `block0.attn.q.weight`.
pub struct Builder<'a, T, R> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut R,
    prefix: String,
}

impl<'a, T: Scalar, R: Rng> Builder<'a, T, R> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut R) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    /// Runs `f` with the prefix extended by `scope`.
    pub fn scoped<O>(&mut self, scope: &str, f: impl FnOnce(&mut Self) -> Result<O>) -> Result<O> {
        let saved = self.prefix.clone();
        self.prefix = self.full_name(scope);
        let out = f(self);
        self.prefix = saved;
        out
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        let value = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::full(shape, T::one()),
            Init::Normal(std) => Tensor::randn(shape, std, self.rng),
            Init::FanIn(fan_in) => Tensor::uniform(shape, 1.0 / (fan_in.max(1) as f64).sqrt(), self.rng),
        };
        let decay = shape.len() >= 2;
        self.store.add(&self.full_name(name), value, decay)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn names_are_unique_and_scoped() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = rand::rngs::StdRng::seed_from_u64(0);
        let mut b = Builder::new(&mut store, &mut rng);
        let a = b
            .scoped("enc", |b| b.scoped("l0", |b| b.param("w", &[2, 2], Init::Zeros)))
            .unwrap();
        assert!(b
            .scoped("enc", |b| b.scoped("l0", |b| b.param("w", &[2, 2], Init::Zeros)))
            .is_err());
        assert_eq!(store.get(a).name, "enc.l0.w");
        assert_eq!(store.id_of("enc.l0.w"), Some(a));
    }
}
