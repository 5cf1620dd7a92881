//! LSTM and GRU encoders run in both directions over masked sequences.
//!
//! State is carried only through real timesteps: at a padded step the
//! previous state passes through unchanged and the output is zero. The
//! backward direction therefore starts from a zero state at each sequence's
//! own last real position, and extra padding never changes real outputs.

use alloc::vec;
use alloc::vec::Vec;

use super::{Builder, Ctx};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::ParamId;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

/// One direction of a recurrent layer. LSTM gate order is (input, forget,
/// cell, output); GRU gate order is (reset, update, new).
#[derive(Debug, Clone)]
struct Cell {
    kind: CellKind,
    hidden: usize,
    w_ih: ParamId,
    w_hh: ParamId,
    b_ih: ParamId,
    /// GRU only: recurrent bias, kept apart because the reset gate scales it.
    b_hh: Option<ParamId>,
}

impl Cell {
    fn new<S: Scalar>(b: &mut Builder<S>, kind: CellKind, input: usize, hidden: usize) -> Result<Self> {
        let g = kind.gates();
        let bound = 1.0 / num_traits::Float::sqrt(hidden as f64);
        let w_ih = b.uniform("w_ih", vec![input, g * hidden], bound)?;
        let w_hh = b.uniform("w_hh", vec![hidden, g * hidden], bound)?;
        let (b_ih, b_hh) = match kind {
            CellKind::Lstm => {
                let mut bias = b.uniform_tensor(vec![g * hidden], bound)?;
                // forget gate starts open
                bias.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = S::one());
                (b.tensor("bias", bias, true)?, None)
            }
            CellKind::Gru => (
                b.uniform("b_ih", vec![g * hidden], bound)?,
                Some(b.uniform("b_hh", vec![g * hidden], bound)?),
            ),
        };
        Ok(Self {
            kind,
            hidden,
            w_ih,
            w_hh,
            b_ih,
            b_hh,
        })
    }

    /// Runs over `x: [B, T, d]` in the given time order. Returns per-step
    /// outputs in time order and the final hidden state.
    fn run<S: Scalar>(
        &self,
        cx: &mut Ctx<S>,
        x: Var,
        steps: &[(Var, Var)],
        reverse: bool,
    ) -> Result<(Vec<Var>, Var)> {
        let s = cx.g.shape(x).to_vec();
        let (bsz, t) = (s[0], s[1]);
        let h = self.hidden;
        let g = self.kind.gates();
        let w_ih = cx.param(self.w_ih);
        let w_hh = cx.param(self.w_hh);
        let b_ih = cx.param(self.b_ih);
        let xw = cx.g.matmul(x, w_ih)?;
        let xw = cx.g.add(xw, b_ih)?; // [B, T, g*h]
        let b_hh = self.b_hh.map(|p| cx.param(p));

        let mut state_h = cx.g.constant(Tensor::zeros(vec![bsz, h]));
        let mut state_c = cx.g.constant(Tensor::zeros(vec![bsz, h]));
        let mut outputs = vec![None; t];
        let order: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
        for step in order {
            let (m, keep) = steps[step];
            let xt = cx.g.slice(xw, 1, step, 1)?;
            let xt = cx.g.reshape(xt, vec![bsz, g * h])?;
            let hw = cx.g.matmul(state_h, w_hh)?;
            let (h_new, c_new) = match self.kind {
                CellKind::Lstm => {
                    let gates = cx.g.add(xt, hw)?;
                    let parts = cx.g.split(gates, 1, &[h, h, h, h])?;
                    let i = cx.g.sigmoid(parts[0])?;
                    let f = cx.g.sigmoid(parts[1])?;
                    let cand = cx.g.tanh(parts[2])?;
                    let o = cx.g.sigmoid(parts[3])?;
                    let fc = cx.g.mul(f, state_c)?;
                    let ig = cx.g.mul(i, cand)?;
                    let c = cx.g.add(fc, ig)?;
                    let tc = cx.g.tanh(c)?;
                    (cx.g.mul(o, tc)?, Some(c))
                }
                CellKind::Gru => {
                    let hw = cx.g.add(hw, b_hh.expect("gru bias"))?;
                    let xp = cx.g.split(xt, 1, &[h, h, h])?;
                    let hp = cx.g.split(hw, 1, &[h, h, h])?;
                    let r = cx.g.add(xp[0], hp[0])?;
                    let r = cx.g.sigmoid(r)?;
                    let z = cx.g.add(xp[1], hp[1])?;
                    let z = cx.g.sigmoid(z)?;
                    let rh = cx.g.mul(r, hp[2])?;
                    let n = cx.g.add(xp[2], rh)?;
                    let n = cx.g.tanh(n)?;
                    // h' = n + z * (h - n)
                    let diff = cx.g.sub(state_h, n)?;
                    let zd = cx.g.mul(z, diff)?;
                    (cx.g.add(n, zd)?, None)
                }
            };
            let out = cx.g.mul(m, h_new)?;
            outputs[step] = Some(out);
            let carry = cx.g.mul(keep, state_h)?;
            state_h = cx.g.add(out, carry)?;
            if let Some(c_new) = c_new {
                let mc = cx.g.mul(m, c_new)?;
                let carry = cx.g.mul(keep, state_c)?;
                state_c = cx.g.add(mc, carry)?;
            }
        }
        Ok((outputs.into_iter().map(|o| o.expect("every step visited")).collect(), state_h))
    }
}

/// Result of a bidirectional pass.
#[derive(Debug, Clone, Copy)]
pub struct RnnOutput {
    /// `[B, T, 2h]`, zero at padded positions.
    pub outputs: Var,
    /// `[B, h]` state after each sequence's last real step.
    pub final_forward: Var,
    /// `[B, h]` state after the backward direction reaches position 0.
    pub final_backward: Var,
}

/// BiLSTM / BiGRU layer.
#[derive(Debug, Clone)]
pub struct BiRnn {
    forward: Cell,
    backward: Cell,
    pub input_dim: usize,
    pub hidden: usize,
}

impl BiRnn {
    pub fn new<S: Scalar>(b: &mut Builder<S>, kind: CellKind, input_dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            forward: Cell::new(&mut b.sub("fw"), kind, input_dim, hidden)?,
            backward: Cell::new(&mut b.sub("bw"), kind, input_dim, hidden)?,
            input_dim,
            hidden,
        })
    }

    pub fn lstm<S: Scalar>(b: &mut Builder<S>, input_dim: usize, hidden: usize) -> Result<Self> {
        Self::new(b, CellKind::Lstm, input_dim, hidden)
    }

    pub fn gru<S: Scalar>(b: &mut Builder<S>, input_dim: usize, hidden: usize) -> Result<Self> {
        Self::new(b, CellKind::Gru, input_dim, hidden)
    }

    /// `x: [B, T, d]` with `mask: [B, T]` marking real positions.
    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, x: Var, mask: &Tensor<S>) -> Result<RnnOutput> {
        let s = cx.g.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.input_dim || mask.shape() != &s[..2] {
            return Err(Error::ShapeMismatch {
                op: "birnn",
                lhs: s,
                rhs: mask.shape().to_vec(),
            });
        }
        let (bsz, t) = (s[0], s[1]);
        let steps = step_masks(cx, mask, bsz, t)?;
        let (fw, final_forward) = self.forward.run(cx, x, &steps, false)?;
        let (bw, final_backward) = self.backward.run(cx, x, &steps, true)?;
        let h = self.hidden;
        let mut per_step = Vec::with_capacity(t);
        for (f, b) in fw.into_iter().zip(bw) {
            let both = cx.g.concat(&[f, b], 1)?;
            per_step.push(cx.g.reshape(both, vec![bsz, 1, 2 * h])?);
        }
        let outputs = if per_step.is_empty() {
            cx.g.constant(Tensor::zeros(vec![bsz, 0, 2 * h]))
        } else {
            cx.g.concat(&per_step, 1)?
        };
        Ok(RnnOutput {
            outputs,
            final_forward,
            final_backward,
        })
    }
}

/// Per-timestep `[B, 1]` mask and its complement.
fn step_masks<S: Scalar>(cx: &mut Ctx<S>, mask: &Tensor<S>, bsz: usize, t: usize) -> Result<Vec<(Var, Var)>> {
    (0..t)
        .map(|step| {
            let m: Vec<S> = (0..bsz).map(|b| mask.data()[b * t + step]).collect();
            let keep: Vec<S> = m.iter().map(|&v| S::one() - v).collect();
            Ok((
                cx.g.constant(Tensor::new(vec![bsz, 1], m)?),
                cx.g.constant(Tensor::new(vec![bsz, 1], keep)?),
            ))
        })
        .collect()
}

/// Several bidirectional layers, each fed the previous layer's output.
#[derive(Debug, Clone)]
pub struct StackedBiRnn {
    pub layers: Vec<BiRnn>,
}

impl StackedBiRnn {
    pub fn new<S: Scalar>(
        b: &mut Builder<S>,
        kind: CellKind,
        input_dim: usize,
        hidden: usize,
        num_layers: usize,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let input = if l == 0 { input_dim } else { 2 * hidden };
            layers.push(BiRnn::new(&mut b.sub(&alloc::format!("layer{l}")), kind, input, hidden)?);
        }
        Ok(Self { layers })
    }

    /// Runs every layer; `between` is applied to each layer's input (dropout).
    pub fn forward<S: Scalar>(
        &self,
        cx: &mut Ctx<S>,
        x: Var,
        mask: &Tensor<S>,
        mut between: impl FnMut(&mut Ctx<S>, Var) -> Result<Var>,
    ) -> Result<Var> {
        let mut cur = x;
        for layer in &self.layers {
            let inp = between(cx, cur)?;
            cur = layer.forward(cx, inp, mask)?.outputs;
        }
        Ok(cur)
    }
}
