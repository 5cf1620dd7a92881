use alloc::vec;

use super::{Builder, Ctx};
use crate::autodiff::Var;
use crate::error::Result;
use crate::params::ParamId;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Max,
    Mean,
    /// Masked-softmax weights from a learned scoring vector.
    WeightedSum,
}

/// Masked reduction of `x: [B, T, d]` over time to `[B, d]`. `score` is the
/// learned `[d, 1]` vector used by [`ReduceKind::WeightedSum`].
pub fn reduce_sequence<S: Scalar>(
    cx: &mut Ctx<S>,
    x: Var,
    mask: &Tensor<S>,
    kind: ReduceKind,
    score: Option<ParamId>,
) -> Result<Var> {
    let s = cx.g.shape(x).to_vec();
    let (bsz, t, d) = (s[0], s[1], s[2]);
    match kind {
        ReduceKind::Max => {
            let m3 = mask.clone().reshape(vec![bsz, t, 1])?;
            let masked = cx.g.mask_logits(x, &m3)?;
            cx.g.max_axis(masked, 1)
        }
        ReduceKind::Mean => {
            let m = cx.mask3(mask)?;
            let xm = cx.g.mul(x, m)?;
            let total = cx.g.sum_axis(xm, 1)?;
            let counts: alloc::vec::Vec<S> = mask
                .data()
                .chunks(t.max(1))
                .map(|row| S::one() / row.iter().copied().sum::<S>().max(S::one()))
                .collect();
            let inv = cx.g.constant(Tensor::new(vec![bsz, 1], counts)?);
            cx.g.mul(total, inv)
        }
        ReduceKind::WeightedSum => {
            let w = cx.param(score.expect("weighted_sum needs a scoring vector"));
            let scores = cx.g.matmul(x, w)?;
            let scores = cx.g.reshape(scores, vec![bsz, t])?;
            let alpha = cx.g.masked_softmax(scores, mask)?;
            let alpha = cx.g.reshape(alpha, vec![bsz, 1, t])?;
            let out = cx.g.matmul(alpha, x)?;
            cx.g.reshape(out, vec![bsz, d])
        }
    }
}

/// [`reduce_sequence`] bundled with its parameters.
#[derive(Debug, Clone)]
pub struct SequenceReducer {
    pub kind: ReduceKind,
    pub score: Option<ParamId>,
}

impl SequenceReducer {
    pub fn new<S: Scalar>(b: &mut Builder<S>, kind: ReduceKind, dim: usize) -> Result<Self> {
        let score = match kind {
            ReduceKind::WeightedSum => Some(b.glorot("score", dim, 1)?),
            _ => None,
        };
        Ok(Self { kind, score })
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var, mask: &Tensor<S>) -> Result<Var> {
        reduce_sequence(cx, x, mask, self.kind, self.score)
    }
}
