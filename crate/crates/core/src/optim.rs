//! First-order optimizers with global-norm clipping and exponential
//! learning-rate decay.

use alloc::format;
use alloc::vec::Vec;
use core::str::FromStr;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Adadelta,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(Self::Adam),
            "adadelta" => Ok(Self::Adadelta),
            "sgd" => Ok(Self::Sgd),
            other => Err(Error::Config(format!(
                "unknown optimizer name {other:?} (expected adam, adadelta or sgd)"
            ))),
        }
    }
}

/// `lr = lr0 * rate^(step / steps)`, with an integer exponent when
/// `staircase` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDecay {
    pub rate: f64,
    pub steps: u64,
    #[serde(default)]
    pub staircase: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub name: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Adadelta decay.
    pub rho: f64,
    pub clip_norm: Option<f64>,
    pub decay: Option<LrDecay>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            name: OptimizerKind::Adam,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            rho: 0.95,
            clip_norm: Some(5.0),
            decay: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("optimizer: {what}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1)");
        }
        if self.clip_norm.is_some_and(|c| c <= 0.0) {
            return bad("clip_norm must be positive");
        }
        if let Some(d) = self.decay {
            if d.steps == 0 || d.rate <= 0.0 {
                return bad("decay needs rate > 0 and steps > 0");
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        match self.decay {
            None => self.learning_rate,
            Some(d) => {
                let e = if d.staircase {
                    (step / d.steps) as f64
                } else {
                    step as f64 / d.steps as f64
                };
                self.learning_rate * d.rate.powf(e)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub lr: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Rescales trainable gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients<S: Scalar>(store: &mut ParamStore<S>, max_norm: f64) -> f64 {
    let norm = store.grad_norm().as_f64();
    if norm > max_norm && norm.is_finite() {
        let c = S::of(max_norm / norm);
        for p in store.iter_mut().filter(|p| p.trainable) {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= c);
        }
    }
    norm
}

#[derive(Debug, Clone)]
pub struct Optimizer<S> {
    pub config: OptimizerConfig,
    step: u64,
    /// Per-parameter accumulators: Adam (m, v), Adadelta (E[g^2], E[dx^2]).
    slots: Vec<Vec<Tensor<S>>>,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(config: OptimizerConfig, store: &ParamStore<S>) -> Result<Self> {
        config.validate()?;
        let n_slots = match config.name {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam | OptimizerKind::Adadelta => 2,
        };
        let slots = store
            .iter()
            .map(|(_, p)| {
                (0..n_slots)
                    .map(|_| Tensor::zeros(p.value.shape().to_vec()))
                    .collect()
            })
            .collect();
        Ok(Self {
            config,
            step: 0,
            slots,
        })
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.config.lr_at(self.step)
    }

    pub fn slots(&self) -> &[Vec<Tensor<S>>] {
        &self.slots
    }

    /// Restores state saved from an optimizer over the same parameters.
    pub fn restore(&mut self, step: u64, slots: Vec<Vec<Tensor<S>>>) -> Result<()> {
        let same = slots.len() == self.slots.len()
            && slots.iter().zip(&self.slots).all(|(a, b)| {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.shape() == y.shape())
            });
        if !same {
            return Err(Error::Config("optimizer state does not match the parameters".into()));
        }
        self.step = step;
        self.slots = slots;
        Ok(())
    }

    /// Clips, then applies one update from the accumulated gradients.
    pub fn step(&mut self, store: &mut ParamStore<S>) -> StepInfo {
        let grad_norm = match self.config.clip_norm {
            Some(c) => clip_gradients(store, c),
            None => store.grad_norm().as_f64(),
        };
        let lr = self.current_lr();
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let (b1, b2) = (S::of(c.beta1), S::of(c.beta2));
        let bc1 = S::of(1.0 - c.beta1.powi(t));
        let bc2 = S::of(1.0 - c.beta2.powi(t));
        let (rho, eps, lr_s) = (S::of(c.rho), S::of(c.epsilon), S::of(lr));
        for (p, slots) in store.iter_mut().zip(self.slots.iter_mut()) {
            if !p.trainable {
                continue;
            }
            let w = p.value.data_mut();
            let g = p.grad.data();
            match c.name {
                OptimizerKind::Sgd => {
                    for (w, &g) in w.iter_mut().zip(g) {
                        *w -= lr_s * g;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = slots.split_at_mut(1);
                    let (m, v) = (m[0].data_mut(), v[0].data_mut());
                    for i in 0..w.len() {
                        m[i] = b1 * m[i] + (S::one() - b1) * g[i];
                        v[i] = b2 * v[i] + (S::one() - b2) * g[i] * g[i];
                        let mh = m[i] / bc1;
                        let vh = v[i] / bc2;
                        w[i] -= lr_s * mh / (Float::sqrt(vh) + eps);
                    }
                }
                OptimizerKind::Adadelta => {
                    let (eg, ex) = slots.split_at_mut(1);
                    let (eg, ex) = (eg[0].data_mut(), ex[0].data_mut());
                    for i in 0..w.len() {
                        eg[i] = rho * eg[i] + (S::one() - rho) * g[i] * g[i];
                        let dx = -Float::sqrt(ex[i] + eps) / Float::sqrt(eg[i] + eps) * g[i];
                        ex[i] = rho * ex[i] + (S::one() - rho) * dx * dx;
                        w[i] += lr_s * dx;
                    }
                }
            }
        }
        StepInfo { lr, grad_norm }
    }
}
