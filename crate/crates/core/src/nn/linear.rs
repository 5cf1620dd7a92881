use alloc::vec;

use super::{Builder, Ctx};
use crate::autodiff::Var;
use crate::error::Result;
use crate::params::ParamId;
use crate::scalar::Scalar;

/// `y = x W + b` over the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<S: Scalar>(b: &mut Builder<S>, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let weight = b.glorot("weight", in_dim, out_dim)?;
        let bias = if bias {
            Some(b.constant("bias", vec![out_dim], 0.0)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var) -> Result<Var> {
        let shape = cx.g.shape(x).to_vec();
        let w = cx.param(self.weight);
        // flatten leading axes so the product is one 2-D matmul
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let flat = cx.g.reshape(x, vec![rows, shape[shape.len() - 1]])?;
        let mut y = cx.g.matmul(flat, w)?;
        if let Some(b) = self.bias {
            let bv = cx.param(b);
            y = cx.g.add(y, bv)?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.out_dim;
        cx.g.reshape(y, out_shape)
    }
}

/// Bilinear pointer score `s_t = p_t W q` for a sequence `P: [B, T, dp]`
/// against one vector per example `q: [B, dq]`, giving `[B, T]`.
#[derive(Debug, Clone)]
pub struct Bilinear {
    pub weight: ParamId,
    pub seq_dim: usize,
    pub query_dim: usize,
}

impl Bilinear {
    pub fn new<S: Scalar>(b: &mut Builder<S>, seq_dim: usize, query_dim: usize) -> Result<Self> {
        let weight = b.glorot("weight", query_dim, seq_dim)?;
        Ok(Self {
            weight,
            seq_dim,
            query_dim,
        })
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, seq: Var, query: Var) -> Result<Var> {
        let s = cx.g.shape(seq).to_vec();
        let (bsz, t) = (s[0], s[1]);
        let w = cx.param(self.weight);
        let qw = cx.g.matmul(query, w)?; // [B, dp]
        let qw = cx.g.reshape(qw, vec![bsz, self.seq_dim, 1])?;
        let scores = cx.g.matmul(seq, qw)?; // [B, T, 1]
        cx.g.reshape(scores, vec![bsz, t])
    }
}
