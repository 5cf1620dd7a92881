use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{Ctx, Mode};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Dropout with one mask per (example, feature), shared across timesteps.
#[derive(Debug, Clone, Copy)]
pub struct VariationalDropout {
    pub rate: f64,
}

impl VariationalDropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(alloc::format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self { rate })
    }

    /// `x: [B, T, d]` (or `[B, d]`). Identity in eval mode or at rate 0.
    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var) -> Result<Var> {
        if cx.mode == Mode::Eval || self.rate == 0.0 {
            return Ok(x);
        }
        let s = cx.g.shape(x).to_vec();
        let (bsz, d) = (s[0], s[s.len() - 1]);
        let keep = 1.0 - self.rate;
        let scale = S::of(1.0 / keep);
        let data: Vec<S> = (0..bsz * d)
            .map(|_| if cx.rng.random_bool(keep) { scale } else { S::zero() })
            .collect();
        let shape = if s.len() == 3 { vec![bsz, 1, d] } else { vec![bsz, d] };
        let mask = cx.g.constant(Tensor::new(shape, data)?);
        cx.g.mul(x, mask)
    }
}
