use alloc::vec;

use super::{Builder, Ctx};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::ParamId;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityKind {
    /// `<h_t, u_j>`, optionally divided by `sqrt(d)`.
    DotProduct { scaled: bool },
    /// `w . [h; u; h*u]`
    TriLinear,
    /// `v . tanh(W1 h + W2 u)` with the given hidden width.
    Mlp { hidden: usize },
}

#[derive(Debug, Clone)]
enum Params {
    None,
    TriLinear { w: ParamId },
    Mlp { w1: ParamId, w2: ParamId, v: ParamId, hidden: usize },
}

/// Word-level similarity between two sequences, `H: [B, T, d]` and
/// `U: [B, J, d]`, producing scores `[B, T, J]`.
#[derive(Debug, Clone)]
pub struct Similarity {
    pub kind: SimilarityKind,
    pub dim: usize,
    params: Params,
}

impl Similarity {
    pub fn new<S: Scalar>(b: &mut Builder<S>, kind: SimilarityKind, dim: usize) -> Result<Self> {
        let params = match kind {
            SimilarityKind::DotProduct { .. } => Params::None,
            SimilarityKind::TriLinear => {
                let bound = num_traits::Float::sqrt(1.0 / (3 * dim) as f64);
                Params::TriLinear {
                    w: b.uniform("w", vec![3 * dim], bound)?,
                }
            }
            SimilarityKind::Mlp { hidden } => Params::Mlp {
                w1: b.glorot("w1", dim, hidden)?,
                w2: b.glorot("w2", dim, hidden)?,
                v: b.glorot("v", hidden, 1)?,
                hidden,
            },
        };
        Ok(Self { kind, dim, params })
    }

    pub fn tri_linear_weight(&self) -> Option<ParamId> {
        match self.params {
            Params::TriLinear { w } => Some(w),
            _ => None,
        }
    }

    pub fn mlp_params(&self) -> Option<(ParamId, ParamId, ParamId)> {
        match self.params {
            Params::Mlp { w1, w2, v, .. } => Some((w1, w2, v)),
            _ => None,
        }
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, h: Var, u: Var) -> Result<Var> {
        let sh = cx.g.shape(h).to_vec();
        let su = cx.g.shape(u).to_vec();
        if sh.len() != 3 || su.len() != 3 || sh[2] != su[2] || sh[0] != su[0] || sh[2] != self.dim {
            return Err(Error::ShapeMismatch {
                op: "similarity",
                lhs: sh,
                rhs: su,
            });
        }
        let (bsz, t, j, d) = (sh[0], sh[1], su[1], sh[2]);
        match (&self.params, self.kind) {
            (Params::None, SimilarityKind::DotProduct { scaled }) => {
                let ut = cx.g.transpose(u, 1, 2)?;
                let s = cx.g.matmul(h, ut)?;
                Ok(if scaled {
                    cx.g.scale(s, S::one() / S::from_usize(d).sqrt())
                } else {
                    s
                })
            }
            (Params::TriLinear { w }, _) => {
                let w = cx.param(*w);
                let w = cx.g.reshape(w, vec![3 * d, 1])?;
                let parts = cx.g.split(w, 0, &[d, d, d])?;
                // h . w_h -> [B, T, 1]
                let sh_ = cx.g.matmul(h, parts[0])?;
                // u . w_u -> [B, 1, J]
                let su_ = cx.g.matmul(u, parts[1])?;
                let su_ = cx.g.reshape(su_, vec![bsz, 1, j])?;
                // (h * w_hu) . u^T -> [B, T, J]
                let w_hu = cx.g.reshape(parts[2], vec![d])?;
                let hw = cx.g.mul(h, w_hu)?;
                let ut = cx.g.transpose(u, 1, 2)?;
                let cross = cx.g.matmul(hw, ut)?;
                let s = cx.g.add(cross, sh_)?;
                cx.g.add(s, su_)
            }
            (Params::Mlp { w1, w2, v, hidden }, _) => {
                let k = *hidden;
                let w1 = cx.param(*w1);
                let w2 = cx.param(*w2);
                let v = cx.param(*v);
                let a = cx.g.matmul(h, w1)?;
                let a = cx.g.reshape(a, vec![bsz, t, 1, k])?;
                let c = cx.g.matmul(u, w2)?;
                let c = cx.g.reshape(c, vec![bsz, 1, j, k])?;
                let z = cx.g.add(a, c)?;
                let z = cx.g.tanh(z)?;
                let s = cx.g.matmul(z, v)?;
                cx.g.reshape(s, vec![bsz, t, j])
            }
            _ => unreachable!("parameters always match the kind"),
        }
    }
}
