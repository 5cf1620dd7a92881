//! Training-loop state that does not touch the filesystem: weight
//! averaging, the early-stopping rule and resumable counters.

use alloc::format;
use alloc::vec::Vec;
use core::mem;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_EMA_DECAY: f64 = 0.999;

/// Exponential moving average of the trainable parameters,
/// `shadow = decay * shadow + (1 - decay) * param`, from the first step.
#[derive(Debug, Clone)]
pub struct EmaShadow<S> {
    decay: f64,
    shadow: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> EmaShadow<S> {
    /// Starts the shadow at the current parameter values.
    pub fn new(decay: f64, store: &ParamStore<S>) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::Config(format!("ema decay {decay} outside [0, 1)")));
        }
        let shadow = store
            .iter()
            .map(|(_, p)| p.trainable.then(|| p.value.clone()))
            .collect();
        Ok(Self { decay, shadow })
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn update(&mut self, store: &ParamStore<S>) {
        let mu = S::of(self.decay);
        let rest = S::one() - mu;
        for ((_, p), s) in store.iter().zip(self.shadow.iter_mut()) {
            if let Some(s) = s {
                for (s, &v) in s.data_mut().iter_mut().zip(p.value.data()) {
                    *s = mu * *s + rest * v;
                }
            }
        }
    }

    /// Exchanges shadow and live values. Calling it twice is the identity.
    pub fn swap(&mut self, store: &mut ParamStore<S>) {
        for (p, s) in store.iter_mut().zip(self.shadow.iter_mut()) {
            if let Some(s) = s {
                mem::swap(&mut p.value, s);
            }
        }
    }

    /// Runs `f` with the averaged weights in place, then puts the live
    /// weights back.
    pub fn with_averaged<R>(
        &mut self,
        store: &mut ParamStore<S>,
        f: impl FnOnce(&ParamStore<S>) -> R,
    ) -> R {
        self.swap(store);
        let out = f(store);
        self.swap(store);
        out
    }

    /// Shadow tensors in parameter order; `None` for frozen parameters.
    pub fn tensors(&self) -> &[Option<Tensor<S>>] {
        &self.shadow
    }

    pub fn restore(&mut self, shadow: Vec<Option<Tensor<S>>>) -> Result<()> {
        let same = shadow.len() == self.shadow.len()
            && shadow.iter().zip(&self.shadow).all(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => a.shape() == b.shape(),
                (None, None) => true,
                _ => false,
            });
        if !same {
            return Err(Error::Config("ema shadow does not match the parameters".into()));
        }
        self.shadow = shadow;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestMetric {
    pub f1: f64,
    pub exact_match: f64,
    pub epoch: u64,
}

impl BestMetric {
    /// F1 first, exact match breaks ties.
    pub fn beats(&self, other: &BestMetric) -> bool {
        self.f1 > other.f1 || (self.f1 == other.f1 && self.exact_match > other.exact_match)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: u64,
    pub global_step: u64,
    pub best: Option<BestMetric>,
    /// Evaluations since the last improvement.
    pub bad_evals: u32,
    pub evaluations: u32,
    pub seed: u64,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        Self {
            epoch: 0,
            global_step: 0,
            best: None,
            bad_evals: 0,
            evaluations: 0,
            seed,
        }
    }

    /// Records one dev evaluation and applies the patience rule.
    pub fn observe(&mut self, f1: f64, exact_match: f64, patience: u32) -> Observation {
        self.evaluations += 1;
        let cand = BestMetric {
            f1,
            exact_match,
            epoch: self.epoch,
        };
        let improved = self.best.is_none_or(|b| cand.beats(&b));
        if improved {
            self.best = Some(cand);
            self.bad_evals = 0;
        } else {
            self.bad_evals += 1;
        }
        Observation {
            improved,
            stop: patience > 0 && self.bad_evals >= patience,
        }
    }
}
