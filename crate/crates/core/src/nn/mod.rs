//! Neural components for reading comprehension models: masking, similarity
//! functions, attention, recurrent encoders and basic layers.

mod attention;
mod dropout;
mod embedding;
#[cfg(test)]
mod gradcheck;
mod highway;
mod linear;
mod mask;
mod recurrent;
mod reduce;
mod similarity;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use attention::{bi_attention, self_attention, uni_attention, uni_attention_single};
pub use dropout::VariationalDropout;
pub use embedding::Embedding;
pub use highway::Highway;
pub use linear::{Bilinear, Linear};
pub use mask::{mask_logits, masked_log_softmax, masked_softmax};
pub use recurrent::{BiRnn, CellKind, RnnOutput, StackedBiRnn};
pub use reduce::{reduce_sequence, ReduceKind, SequenceReducer};
pub use similarity::{Similarity, SimilarityKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// State of one forward pass: the graph being built, read access to the
/// parameters, the mode, and the RNG used for dropout sampling.
pub struct Ctx<'a, S: Scalar> {
    pub g: Graph<S>,
    pub store: &'a ParamStore<S>,
    pub mode: Mode,
    pub rng: ChaCha8Rng,
}

impl<'a, S: Scalar> Ctx<'a, S> {
    pub fn new(store: &'a ParamStore<S>, mode: Mode, seed: u64) -> Self {
        Self {
            g: Graph::new(),
            store,
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn with_graph(g: Graph<S>, store: &'a ParamStore<S>, mode: Mode, seed: u64) -> Self {
        Self {
            g,
            store,
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.g.param(self.store, id)
    }

    /// `[B, N]` mask reshaped for broadcasting against `[B, N, d]`.
    pub fn mask3(&mut self, mask: &Tensor<S>) -> Result<Var> {
        let s = mask.shape();
        let t = mask.clone().reshape(alloc::vec![s[0], s[1], 1])?;
        Ok(self.g.constant(t))
    }
}

/// Registers parameters under a name prefix and draws their initial values.
pub struct Builder<'a, S: Scalar> {
    store: &'a mut ParamStore<S>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, S: Scalar> Builder<'a, S> {
    pub fn new(store: &'a mut ParamStore<S>, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// Builder whose names are nested under `name`.
    pub fn sub(&mut self, name: &str) -> Builder<'_, S> {
        let prefix = if self.prefix.is_empty() {
            String::from(name)
        } else {
            format!("{}.{name}", self.prefix)
        };
        Builder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            String::from(name)
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// Draws a tensor from uniform(-bound, bound) without registering it.
    pub fn uniform_tensor(&mut self, shape: Vec<usize>, bound: f64) -> Result<Tensor<S>> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| S::of(if bound > 0.0 { self.rng.random_range(-bound..bound) } else { 0.0 }))
            .collect();
        Tensor::new(shape, data)
    }

    pub fn uniform(&mut self, name: &str, shape: Vec<usize>, bound: f64) -> Result<ParamId> {
        let t = self.uniform_tensor(shape, bound)?;
        self.store.add(self.full_name(name), t)
    }

    /// Uniform with bound `sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<ParamId> {
        let bound = libm_sqrt(6.0 / (fan_in + fan_out).max(1) as f64);
        self.uniform(name, alloc::vec![fan_in, fan_out], bound)
    }

    pub fn constant(&mut self, name: &str, shape: Vec<usize>, value: f64) -> Result<ParamId> {
        self.store.add(self.full_name(name), Tensor::full(shape, S::of(value)))
    }

    pub fn tensor(&mut self, name: &str, value: Tensor<S>, trainable: bool) -> Result<ParamId> {
        self.store.add_with(self.full_name(name), value, trainable)
    }
}

fn libm_sqrt(x: f64) -> f64 {
    num_traits::Float::sqrt(x)
}
