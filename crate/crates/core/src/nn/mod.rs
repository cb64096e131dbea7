//! Minimal module toolkit on top of `candle_core`: a named parameter store
//! with seeded initialisation, plus the layers the model is built from.
//!
//! Convolutions are lowered to im2col + matmul so that backward passes run
//! through the GEMM kernels.

mod layers;
mod wavenet;

pub use layers::{
    check_finite, dropout, leaky_relu, masked_mean, sigmoid, softmax_last_dim, Conv1d, ConvTranspose1d,
    Embedding, LayerNorm, Linear,
};
pub use wavenet::WaveNet;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    Normal(f64),
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
}

struct Inner {
    vars: BTreeMap<String, Var>,
    frozen: BTreeSet<String>,
    rng: ChaCha8Rng,
}

/// Owns every trainable tensor of a model under a dotted name.
#[derive(Clone)]
pub struct ParamStore {
    inner: Arc<Mutex<Inner>>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner {
                vars: BTreeMap::new(),
                frozen: BTreeSet::new(),
                rng: rng::stream(seed, 0),
            })),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn root(&self) -> ParamBuilder {
        ParamBuilder {
            store: self.clone(),
            prefix: String::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// All parameters in name order.
    pub fn vars(&self) -> Vec<(String, Var)> {
        let inner = self.inner.lock().expect("param store poisoned");
        inner.vars.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    /// Parameters that receive optimizer updates.
    pub fn trainable(&self) -> Vec<(String, Var)> {
        let inner = self.inner.lock().expect("param store poisoned");
        inner
            .vars
            .iter()
            .filter(|(k, _)| !inner.frozen.contains(*k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.inner.lock().expect("param store poisoned").vars.get(name).cloned()
    }

    /// Excludes every parameter under `prefix` from training and counting.
    pub fn freeze(&self, prefix: &str) {
        let mut inner = self.inner.lock().expect("param store poisoned");
        let names: Vec<String> = inner
            .vars
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect();
        inner.frozen.extend(names);
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.inner.lock().expect("param store poisoned").frozen.contains(name)
    }

    fn create(&self, name: String, shape: &[usize], init: Init) -> Result<Tensor> {
        let mut inner = self.inner.lock().expect("param store poisoned");
        if inner.vars.contains_key(&name) {
            return Err(Error::Invalid(format!("parameter {name} registered twice")));
        }
        let n: usize = shape.iter().product();
        let values = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Normal(std) => rng::normal_vec(&mut inner.rng, n)
                .into_iter()
                .map(|v| v * std)
                .collect(),
            Init::Uniform(bound) => rng::uniform_vec(&mut inner.rng, n, -bound, bound),
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        inner.vars.insert(name, var);
        Ok(out)
    }
}

/// A cursor into a [`ParamStore`] with a name prefix.
#[derive(Clone)]
pub struct ParamBuilder {
    store: ParamStore,
    prefix: String,
}

impl ParamBuilder {
    pub fn pp(&self, name: impl std::fmt::Display) -> Self {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        Self {
            store: self.store.clone(),
            prefix,
        }
    }

    pub fn get(&self, shape: &[usize], name: &str, init: Init) -> Result<Tensor> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        self.store.create(full, shape, init)
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }
}
