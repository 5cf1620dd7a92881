//! The span-extraction model contract and the built-in BiDAF and DrQA
//! readers.
//!
//! A network only produces unnormalized start/end scores ([`SpanModel`]);
//! [`Model`] adds masking, the loss, the optimizer and answer decoding, so
//! a custom reader plugs in by implementing one method.

mod bidaf;
mod decode;
mod drqa;

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::batch::Batch;
use crate::error::{Error, Result};
use crate::eval::PredictionSet;
use crate::nn::{Builder, Ctx, Mode};
use crate::optim::{Optimizer, OptimizerConfig, StepInfo};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::text::char_substring;

pub use bidaf::Bidaf;
pub use decode::{best_span, best_span_exhaustive};
pub use drqa::Drqa;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Bidaf,
    Drqa,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bidaf" => Ok(Self::Bidaf),
            "drqa" => Ok(Self::Drqa),
            other => Err(Error::Config(format!("unknown model {other:?} (expected bidaf or drqa)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub model: ModelKind,
    pub hidden_size: usize,
    pub dropout: f64,
    /// Longest answer span in tokens.
    pub max_answer_len: usize,
    /// Rows of the word table that receive gradient; `None` trains all,
    /// `Some(0)` freezes the table.
    pub trainable_top_k: Option<usize>,
    pub highway_layers: usize,
    /// DrQA document and question encoder depth.
    pub rnn_layers: usize,
    pub use_tf: bool,
    pub use_exact_match: bool,
    pub use_tags: bool,
    pub tag_dim: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Bidaf,
            hidden_size: 64,
            dropout: 0.2,
            max_answer_len: 17,
            trainable_top_k: Some(1000),
            highway_layers: 2,
            rnn_layers: 3,
            use_tf: true,
            use_exact_match: true,
            use_tags: true,
            tag_dim: 8,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_answer_len == 0 {
            return Err(Error::Config("max_answer_len must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.hidden_size == 0 || self.rnn_layers == 0 {
            return Err(Error::Config("hidden_size and rnn_layers must be positive".into()));
        }
        self.optimizer.validate()
    }
}

/// A network mapping a batch to unnormalized start and end scores `[B, T]`.
pub trait SpanModel<S: Scalar> {
    fn logits(&self, cx: &mut Ctx<S>, batch: &Batch<S>) -> Result<(Var, Var)>;
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct GraphOutput {
    pub start_log_probs: Var,
    pub end_log_probs: Var,
    /// Mean over examples with a gold span of `-log p(start) - log p(end)`;
    /// `None` when the batch has no gold spans.
    pub loss: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct ModelOutput<S> {
    pub start_log_probs: Tensor<S>,
    pub end_log_probs: Tensor<S>,
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

pub struct Model<S: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<S>,
    net: Box<dyn SpanModel<S>>,
    optimizer: Option<Optimizer<S>>,
}

impl<S: Scalar> core::fmt::Debug for Model<S> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("params", &self.store.len())
            .finish()
    }
}

impl<S: Scalar> Model<S> {
    /// Builds the configured network over `word_vectors` (`[V, d]`, row 0
    /// is padding) and a tag vocabulary of `tag_vocab_size` entries.
    pub fn new(config: ModelConfig, word_vectors: Tensor<S>, tag_vocab_size: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if word_vectors.rank() != 2 || word_vectors.shape()[0] < 2 {
            return Err(Error::InvalidShape {
                op: "Model::new",
                shape: word_vectors.shape().to_vec(),
                reason: "word vectors must be [V, d] with V >= 2".into(),
            });
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net: Box<dyn SpanModel<S>> = {
            let mut b = Builder::new(&mut store, &mut rng);
            match config.model {
                ModelKind::Bidaf => Box::new(Bidaf::new(&mut b.sub("bidaf"), &config, word_vectors)?),
                ModelKind::Drqa => Box::new(Drqa::new(&mut b.sub("drqa"), &config, word_vectors, tag_vocab_size)?),
            }
        };
        Ok(Self::from_network(config, store, net))
    }

    /// Wraps a custom network whose parameters live in `store`.
    pub fn from_network(config: ModelConfig, store: ParamStore<S>, net: Box<dyn SpanModel<S>>) -> Self {
        Self {
            config,
            store,
            net,
            optimizer: None,
        }
    }

    pub fn build_graph(&self, cx: &mut Ctx<S>, batch: &Batch<S>) -> Result<GraphOutput> {
        let (start, end) = self.net.logits(cx, batch)?;
        let expect = [batch.size, batch.context_len];
        for v in [start, end] {
            if cx.g.shape(v) != expect {
                return Err(Error::ShapeMismatch {
                    op: "build_graph",
                    lhs: cx.g.shape(v).to_vec(),
                    rhs: expect.to_vec(),
                });
            }
        }
        let start_log_probs = cx.g.masked_log_softmax(start, &batch.context_mask)?;
        let end_log_probs = cx.g.masked_log_softmax(end, &batch.context_mask)?;
        let n_gold = batch.has_span.iter().filter(|&&h| h).count();
        let loss = if n_gold == 0 {
            None
        } else {
            let ps = cx.g.pick(start_log_probs, &batch.span_start)?;
            let pe = cx.g.pick(end_log_probs, &batch.span_end)?;
            let both = cx.g.add(ps, pe)?;
            let w: Vec<S> = batch
                .has_span
                .iter()
                .map(|&h| if h { S::of(-1.0 / n_gold as f64) } else { S::zero() })
                .collect();
            let w = cx.g.constant(Tensor::new(alloc::vec![batch.size], w)?);
            let weighted = cx.g.mul(both, w)?;
            Some(cx.g.sum(weighted))
        };
        Ok(GraphOutput {
            start_log_probs,
            end_log_probs,
            loss,
        })
    }

    /// Forward pass; `seed` drives dropout sampling in training mode.
    pub fn forward(&self, batch: &Batch<S>, mode: Mode, seed: u64) -> Result<ModelOutput<S>> {
        let mut cx = Ctx::new(&self.store, mode, seed);
        let out = self.build_graph(&mut cx, batch)?;
        Ok(ModelOutput {
            start_log_probs: cx.g.value(out.start_log_probs).clone(),
            end_log_probs: cx.g.value(out.end_log_probs).clone(),
            loss: out.loss.map(|l| cx.g.value(l).item().as_f64()),
        })
    }

    /// Attaches the optimizer; gradient clipping and learning-rate decay are
    /// part of its configuration.
    pub fn compile(&mut self, config: OptimizerConfig) -> Result<()> {
        self.optimizer = Some(Optimizer::new(config.clone(), &self.store)?);
        self.config.optimizer = config;
        Ok(())
    }

    pub fn optimizer(&self) -> Option<&Optimizer<S>> {
        self.optimizer.as_ref()
    }

    pub fn optimizer_mut(&mut self) -> Option<&mut Optimizer<S>> {
        self.optimizer.as_mut()
    }

    /// One training update. Parameters are left untouched when the loss or
    /// gradient is not finite.
    pub fn train_step(&mut self, batch: &Batch<S>, seed: u64) -> Result<StepStats> {
        if self.optimizer.is_none() {
            return Err(Error::Config("train_step before compile".into()));
        }
        let mut cx = Ctx::new(&self.store, Mode::Train, seed);
        let out = self.build_graph(&mut cx, batch)?;
        let Some(loss) = out.loss else {
            return Err(Error::Config("training batch has no gold spans".into()));
        };
        let loss_value = cx.g.value(loss).item().as_f64();
        let mut g = cx.g;
        g.backward(loss)?;
        self.store.zero_grads();
        g.accumulate_param_grads(&mut self.store);
        let grad_norm = self.store.grad_norm().as_f64();
        let opt = self.optimizer.as_mut().expect("checked above");
        if !loss_value.is_finite() || !grad_norm.is_finite() {
            return Err(Error::NonFinite {
                step: opt.steps(),
                loss: loss_value,
                lr: opt.current_lr(),
                grad_norm,
            });
        }
        let StepInfo { lr, grad_norm } = opt.step(&mut self.store);
        Ok(StepStats {
            loss: loss_value,
            lr,
            grad_norm,
        })
    }


    /// Best legal span per example, in token indices.
    pub fn decode(&self, output: &ModelOutput<S>, batch: &Batch<S>) -> Vec<Option<(usize, usize)>> {
        decode_spans(output, batch, self.config.max_answer_len)
    }

    /// Answer text per question id, cut from the original context by
    /// character offsets.
    pub fn get_best_answer(&self, output: &ModelOutput<S>, batch: &Batch<S>) -> PredictionSet {
        answers_from_spans(batch, &self.decode(output, batch))
    }
}

pub fn decode_spans<S: Scalar>(
    output: &ModelOutput<S>,
    batch: &Batch<S>,
    max_answer_len: usize,
) -> Vec<Option<(usize, usize)>> {
    let t = batch.context_len;
    let row = |x: &Tensor<S>, b: usize| -> Vec<f64> { x.data()[b * t..(b + 1) * t].iter().map(|v| v.as_f64()).collect() };
    (0..batch.size)
        .map(|b| {
            best_span(
                &row(&output.start_log_probs, b),
                &row(&output.end_log_probs, b),
                batch.context_lengths[b],
                max_answer_len,
            )
        })
        .collect()
}

pub fn answers_from_spans<S>(batch: &Batch<S>, spans: &[Option<(usize, usize)>]) -> PredictionSet {
    spans
        .iter()
        .enumerate()
        .map(|(b, span)| {
            let text = match span {
                Some((s, e)) => {
                    let offs = &batch.token_offsets[b];
                    String::from(char_substring(&batch.contexts[b], offs[*s].0, offs[*e].1))
                }
                None => String::new(),
            };
            (batch.qids[b].clone(), text)
        })
        .collect()
}
