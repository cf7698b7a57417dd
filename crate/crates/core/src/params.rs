//! Named parameter storage shared by the networks, the optimizer and the
//! checkpoint container.

use std::collections::BTreeMap;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{FusionError, Result};
use crate::real::Real;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Ordered map from dotted parameter names to tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Params<T> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Params<T> {
    pub fn new() -> Self {
        Self {
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.map.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.map
            .get(name)
            .ok_or_else(|| FusionError::Config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.map.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.map.values().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            map: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn map_values(&self, mut f: impl FnMut(&Tensor<T>) -> Tensor<T>) -> Self {
        Self {
            map: self.map.iter().map(|(k, v)| (k.clone(), f(v))).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            map: self.map.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Parameters whose names start with `prefix.`, with the prefix stripped.
    pub fn subset(&self, prefix: &str) -> Self {
        let p = format!("{prefix}.");
        Self {
            map: self
                .map
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    /// Inserts every entry of `other` under `prefix.`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &Params<T>) {
        for (k, v) in other.iter() {
            self.map.insert(format!("{prefix}.{k}"), v.clone());
        }
    }

    /// `self += other` for every shared name.
    pub fn accumulate(&mut self, other: &Params<T>) -> Result<()> {
        for (k, v) in other.iter() {
            let dst = self
                .map
                .get_mut(k)
                .ok_or_else(|| FusionError::Config(format!("unknown gradient `{k}`")))?;
            dst.expect_shape(v.shape(), k)?;
            dst.add_assign(v);
        }
        Ok(())
    }

    pub fn scaled(&self, s: T) -> Self {
        self.map_values(|t| t.scale(s))
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(|t| t.all_finite())
    }

    /// Registers every parameter as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), tape.param(v.clone())))
                .collect(),
        }
    }

    /// Registers every parameter as a constant (no gradient) on `tape`.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), tape.constant(v.clone())))
                .collect(),
        }
    }

    /// Digest over names, shapes and values (values hashed as little-endian
    /// `f64`, so the digest of an `f32` store equals that of its `f64` cast).
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.map {
            h.update((k.len() as u64).to_le_bytes());
            h.update(k.as_bytes());
            for d in v.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for x in v.data() {
                h.update(x.as_f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Tape handles for a bound [`Params`] store.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| FusionError::Config(format!("parameter `{name}` is not bound")))
    }

    pub fn scope(&self, prefix: impl Into<String>) -> Scope<'_> {
        Scope {
            bound: self,
            prefix: prefix.into(),
        }
    }

    /// Collects gradients for every bound parameter; unreached ones are zero.
    pub fn gradients<T: Real>(&self, tape: &Tape<T>, grads: &mut Gradients<T>) -> Params<T> {
        let mut out = Params::new();
        for (k, &v) in &self.vars {
            let g = grads
                .take(v)
                .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()));
            out.insert(k.clone(), g);
        }
        out
    }
}

/// Prefix view into a [`Bound`] store.
#[derive(Clone, Debug)]
pub struct Scope<'a> {
    bound: &'a Bound,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn var(&self, name: &str) -> Result<Var> {
        if self.prefix.is_empty() {
            self.bound.var(name)
        } else {
            self.bound.var(&format!("{}.{name}", self.prefix))
        }
    }

    pub fn sub(&self, name: &str) -> Scope<'a> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Scope {
            bound: self.bound,
            prefix,
        }
    }
}

/// Adds `{prefix}.weight` (`cout × cin × k × k`) and `{prefix}.bias`, drawn
/// uniformly from `±1/sqrt(cin·k·k)`.
pub fn init_conv<T: Real, R: Rng>(
    params: &mut Params<T>,
    prefix: &str,
    cin: usize,
    cout: usize,
    kernel: usize,
    rng: &mut R,
) {
    let bound = 1.0 / ((cin * kernel * kernel) as f64).sqrt();
    let mut draw = || T::lit((rng.random::<f64>() * 2.0 - 1.0) * bound);
    let w = Tensor::from_fn([cout, cin, kernel, kernel], |_| draw());
    let b = Tensor::from_fn([cout, 1, 1, 1], |_| draw());
    params.insert(format!("{prefix}.weight"), w);
    params.insert(format!("{prefix}.bias"), b);
}

pub const PRELU_INIT: f64 = 0.25;

pub fn init_prelu<T: Real>(params: &mut Params<T>, name: &str) {
    params.insert(name, Tensor::full([1, 1, 1, 1], T::lit(PRELU_INIT)));
}
