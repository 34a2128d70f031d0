//! Minimal differentiable-computation substrate: a recorded graph over dense
//! matrices, named parameter storage, layer definitions, and a
//! finite-difference gradient checker.

pub mod gradcheck;
pub mod graph;
pub mod layers;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Grads, Graph, Var};
pub use layers::{AttentionDef, EmbeddingDef, MlpDef};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::BTreeMap;

/// Initialization recipe for a registered parameter.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Value(f64),
    /// Uniform in `±(scale / sqrt(rows))`; the default weight init.
    UniformFanIn { scale: f64 },
    /// Uniform in `±limit`.
    Uniform { limit: f64 },
}

/// Named parameter tensors with aligned gradient accumulators.
///
/// Initialization is deterministic per `(seed, name)`: registration order
/// does not matter. Iteration order is lexicographic everywhere, which keeps
/// optimizer updates and checkpoints reproducible.
#[derive(Debug, Clone)]
pub struct ParamStore {
    seed: u64,
    params: BTreeMap<String, Array2<f64>>,
    grads: BTreeMap<String, Array2<f64>>,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            params: BTreeMap::new(),
            grads: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Register a parameter. Names must be unique.
    pub fn register(&mut self, name: &str, rows: usize, cols: usize, init: Init) {
        assert!(
            !self.params.contains_key(name),
            "duplicate parameter name {name}"
        );
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed ^ fnv1a(name));
        let value = match init {
            Init::Zeros => Array2::zeros((rows, cols)),
            Init::Value(v) => Array2::from_elem((rows, cols), v),
            Init::UniformFanIn { scale } => {
                let limit = scale / (rows as f64).sqrt();
                Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
            }
            Init::Uniform { limit } => {
                Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
            }
        };
        self.grads.insert(name.to_string(), Array2::zeros((rows, cols)));
        self.params.insert(name.to_string(), value);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn value(&self, name: &str) -> &Array2<f64> {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn set(&mut self, name: &str, value: Array2<f64>) {
        let slot = self
            .params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(slot.raw_dim(), value.raw_dim(), "shape change for {name}");
        *slot = value;
    }

    /// Add `delta` to one entry; used by the finite-difference checker.
    pub fn perturb(&mut self, name: &str, index: (usize, usize), delta: f64) {
        let slot = self
            .params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        slot[index] += delta;
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|v| v.len()).sum()
    }

    pub fn grad(&self, name: &str) -> &Array2<f64> {
        self.grads
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.values_mut() {
            g.fill(0.0);
        }
    }

    /// Accumulate `scale * grad` into each named slot.
    pub fn accumulate_grads(&mut self, grads: &BTreeMap<String, Array2<f64>>, scale: f64) {
        for (name, g) in grads {
            let slot = self
                .grads
                .get_mut(name)
                .unwrap_or_else(|| panic!("unknown parameter {name}"));
            slot.scaled_add(scale, g);
        }
    }

    /// Sorted `(name, value)` view, for checkpointing.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// One forward pass: a graph plus the parameter leaves bound into it.
///
/// A frozen session binds parameters as constants, which skips all gradient
/// bookkeeping during evaluation-only forwards.
pub struct Session<'a> {
    pub g: Graph,
    store: &'a ParamStore,
    trainable: bool,
    bound: BTreeMap<String, Var>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            g: Graph::new(),
            store,
            trainable: true,
            bound: BTreeMap::new(),
        }
    }

    pub fn frozen(store: &'a ParamStore) -> Self {
        Self {
            trainable: false,
            ..Self::new(store)
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    /// Bind a named parameter into the graph (cached per session).
    pub fn p(&mut self, name: &str) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let value = self.store.value(name).clone();
        let v = if self.trainable {
            self.g.param(value)
        } else {
            self.g.leaf(value)
        };
        self.bound.insert(name.to_string(), v);
        v
    }

    /// Run the backward pass and return the loss value plus per-parameter
    /// gradients for every bound parameter the loss actually reached.
    pub fn grads(self, loss: Var) -> (f64, BTreeMap<String, Array2<f64>>) {
        let value = self.g.scalar(loss);
        let grads = self.g.backward(loss);
        let mut out = BTreeMap::new();
        for (name, var) in &self.bound {
            if grads.reached(*var) {
                out.insert(name.clone(), grads.get(&self.g, *var));
            }
        }
        (value, out)
    }
}
