use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Softmax over the last axis restricted to `mask`; masked entries are
/// exactly 0 and a fully masked row is all 0.
pub fn masked_softmax<S: Scalar>(g: &mut Graph<S>, logits: Var, mask: &Tensor<S>) -> Result<Var> {
    g.masked_softmax(logits, mask)
}

pub fn masked_log_softmax<S: Scalar>(g: &mut Graph<S>, logits: Var, mask: &Tensor<S>) -> Result<Var> {
    g.masked_log_softmax(logits, mask)
}

/// Masked positions set to `-1e30`; the rest unchanged.
pub fn mask_logits<S: Scalar>(g: &mut Graph<S>, logits: Var, mask: &Tensor<S>) -> Result<Var> {
    g.mask_logits(logits, mask)
}
