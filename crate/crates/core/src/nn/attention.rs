use alloc::vec;

use super::{Ctx, Similarity};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Bidirectional attention flow.
///
/// Context-to-query: each context position attends over the question with a
/// masked softmax of its similarity row. Query-to-context: a softmax over
/// context positions of `max_j S[t, j]`, pooled into one context vector that
/// is tiled across time. Output is `[H; U~; H*U~; H*h~]`, `[B, T, 4d]`.
pub fn bi_attention<S: Scalar>(
    cx: &mut Ctx<S>,
    sim: Var,
    h: Var,
    u: Var,
    context_mask: &Tensor<S>,
    question_mask: &Tensor<S>,
) -> Result<Var> {
    let ss = cx.g.shape(sim).to_vec();
    let sh = cx.g.shape(h).to_vec();
    let su = cx.g.shape(u).to_vec();
    if ss.len() != 3 || sh[..2] != ss[..2] || su[1] != ss[2] || su[2] != sh[2] {
        return Err(Error::ShapeMismatch {
            op: "bi_attention",
            lhs: ss,
            rhs: su,
        });
    }
    let (bsz, t, j) = (ss[0], ss[1], ss[2]);
    let qmask = question_mask.clone().reshape(vec![bsz, 1, j])?;

    // context-to-query
    let a = cx.g.masked_softmax(sim, &qmask)?;
    let u_tilde = cx.g.matmul(a, u)?;

    // query-to-context
    let masked = cx.g.mask_logits(sim, &qmask)?;
    let m = cx.g.max_axis(masked, 2)?;
    let b = cx.g.masked_softmax(m, context_mask)?;
    let b = cx.g.reshape(b, vec![bsz, 1, t])?;
    let h_tilde = cx.g.matmul(b, h)?; // [B, 1, d], broadcast over T below

    let hu = cx.g.mul(h, u_tilde)?;
    let hh = cx.g.mul(h, h_tilde)?;
    cx.g.concat(&[h, u_tilde, hu, hh], 2)
}

/// Attention of `query: [B, Q, d]` over `keys: [B, T, d]`, returning the
/// masked-softmax-weighted sum of `values: [B, T, dv]` per query.
pub fn uni_attention<S: Scalar>(
    cx: &mut Ctx<S>,
    scorer: &Similarity,
    query: Var,
    keys: Var,
    values: Var,
    key_mask: &Tensor<S>,
) -> Result<Var> {
    let sk = cx.g.shape(keys).to_vec();
    let sv = cx.g.shape(values).to_vec();
    if sk[..2] != sv[..2] {
        return Err(Error::ShapeMismatch {
            op: "uni_attention",
            lhs: sk,
            rhs: sv,
        });
    }
    let scores = scorer.forward(cx, query, keys)?;
    let mask = key_mask.clone().reshape(vec![sk[0], 1, sk[1]])?;
    let weights = cx.g.masked_softmax(scores, &mask)?;
    cx.g.matmul(weights, values)
}

/// [`uni_attention`] with one query vector per example, `[B, d] -> [B, dv]`.
pub fn uni_attention_single<S: Scalar>(
    cx: &mut Ctx<S>,
    scorer: &Similarity,
    query: Var,
    keys: Var,
    values: Var,
    key_mask: &Tensor<S>,
) -> Result<Var> {
    let sq = cx.g.shape(query).to_vec();
    if sq.len() != 2 {
        return Err(Error::InvalidShape {
            op: "uni_attention",
            shape: sq,
            reason: "query must be [B, d]".into(),
        });
    }
    let q = cx.g.reshape(query, vec![sq[0], 1, sq[1]])?;
    let out = uni_attention(cx, scorer, q, keys, values, key_mask)?;
    let dv = cx.g.shape(values)[2];
    cx.g.reshape(out, vec![sq[0], dv])
}

/// A sequence attending over itself. With `exclude_diagonal`, position `t`
/// cannot attend to itself.
pub fn self_attention<S: Scalar>(
    cx: &mut Ctx<S>,
    scorer: &Similarity,
    x: Var,
    mask: &Tensor<S>,
    exclude_diagonal: bool,
) -> Result<Var> {
    let s = cx.g.shape(x).to_vec();
    let (bsz, t) = (s[0], s[1]);
    let mut full = vec![S::zero(); bsz * t * t];
    for b in 0..bsz {
        for i in 0..t {
            for k in 0..t {
                let keep = mask.data()[b * t + k] != S::zero() && !(exclude_diagonal && i == k);
                if keep {
                    full[(b * t + i) * t + k] = S::one();
                }
            }
        }
    }
    let full = Tensor::new(vec![bsz, t, t], full)?;
    let scores = scorer.forward(cx, x, x)?;
    let weights = cx.g.masked_softmax(scores, &full)?;
    cx.g.matmul(weights, x)
}
