use alloc::format;
use alloc::vec::Vec;

use super::{Builder, Ctx, Linear};
use crate::autodiff::Var;
use crate::error::Result;
use crate::scalar::Scalar;

/// Stack of highway layers, `y = g * relu(W x + b) + (1 - g) * x` with
/// `g = sigmoid(W_g x + b_g)`.
#[derive(Debug, Clone)]
pub struct Highway {
    pub layers: Vec<(Linear, Linear)>,
}

impl Highway {
    pub fn new<S: Scalar>(b: &mut Builder<S>, dim: usize, num_layers: usize) -> Result<Self> {
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let mut sub = b.sub(&format!("layer{l}"));
            let transform = Linear::new(&mut sub.sub("transform"), dim, dim, true)?;
            let gate = Linear::new(&mut sub.sub("gate"), dim, dim, true)?;
            layers.push((transform, gate));
        }
        Ok(Self { layers })
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var) -> Result<Var> {
        let mut cur = x;
        for (transform, gate) in &self.layers {
            let f = transform.forward(cx, cur)?;
            let f = cx.g.relu(f)?;
            let gl = gate.forward(cx, cur)?;
            let g = cx.g.sigmoid(gl)?;
            let carry = cx.g.one_minus(g);
            let a = cx.g.mul(g, f)?;
            let c = cx.g.mul(carry, cur)?;
            cur = cx.g.add(a, c)?;
        }
        Ok(cur)
    }
}
