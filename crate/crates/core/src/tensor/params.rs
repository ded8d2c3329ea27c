use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::value::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Replaces every value from `other`, which must carry the same names
    /// and shapes.
    pub fn load_from(&mut self, other: &[(String, Tensor)]) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::data(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        for (name, value) in other {
            let id = self
                .id(name)
                .ok_or_else(|| Error::data(format!("unknown parameter {name}")))?;
            if self.get(id).shape() != value.shape() {
                return Err(Error::data(format!(
                    "parameter {name}: expected shape {:?}, found {:?}",
                    self.get(id).shape(),
                    value.shape()
                )));
            }
            *self.get_mut(id) = value.clone();
        }
        Ok(())
    }
}

/// A tape plus lazily bound parameters and the per-pass random stream.
pub struct Session<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    training: bool,
    trainable: bool,
    pub rng: ChaCha8Rng,
}

impl<'a> Session<'a> {
    /// Gradient-recording pass; `training` enables dropout.
    pub fn new(store: &'a ParamStore, training: bool, seed: u64) -> Self {
        Session {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            training,
            trainable: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Deterministic pass that records no parameter gradients.
    pub fn inference(store: &'a ParamStore) -> Self {
        let mut s = Self::new(store, false, 0);
        s.trainable = false;
        s
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    /// The tape variable for a parameter, created on first use.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).clone(), self.trainable);
        self.bound[id.0] = Some(v);
        v
    }

    /// Gradients for all bound parameters after `tape.backward`.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.and_then(|v| self.tape.grad(v)).map(|g| (ParamId(i), g)))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }
}

/// FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
pub(crate) fn stable_hash(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

impl ParamStore {
    /// Registers a tensor drawn from `U(-1/√fan_in, 1/√fan_in)`. The stream is
    /// seeded by `seed` and the parameter name, independent of registration
    /// order.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        seed: u64,
    ) -> Result<ParamId> {
        use rand::Rng;
        let name = name.into();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(&name));
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        // f32-representable so checkpoints round-trip exactly.
        let data = (0..n).map(|_| f64::from(rng.gen_range(-bound..bound) as f32)).collect();
        self.add(name, Tensor::new(shape, data)?)
    }

    pub fn add_const(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> Result<ParamId> {
        self.add(name, Tensor::full(shape, value))
    }
}
