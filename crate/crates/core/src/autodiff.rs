//! Dynamic computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass. Operations append nodes in
//! evaluation order, so the node list is already topologically sorted and
//! [`Graph::backward`] simply walks it in reverse. Parameters enter the graph
//! as leaves through [`Graph::param`]; after backward their gradients are
//! folded into the owning [`ParamStore`] with [`Graph::accumulate_param_grads`].

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{broadcast_map, broadcast_shape, Tensor};

/// Fill value for masked logits. Finite so that 32-bit arithmetic on it
/// never produces NaN.
pub const MASK_FILL: f64 = -1e30;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which rows of an embedding matrix receive gradient from a lookup.
/// Row 0 (padding) never does.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowGrad {
    All,
    Frozen,
    /// Rows with index below `k`, plus the unknown-word row 1. `k = 0` freezes
    /// the whole matrix.
    TopK(usize),
}

impl RowGrad {
    fn admits(self, row: usize) -> bool {
        if row == 0 {
            return false;
        }
        match self {
            RowGrad::All => true,
            RowGrad::Frozen => false,
            RowGrad::TopK(0) => false,
            RowGrad::TopK(k) => row < k || row == 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnaryKind {
    Neg,
    Tanh,
    Sigmoid,
    Relu,
    Exp,
    Log,
}

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    Param(ParamId),
    Binary(BinaryKind, Var, Var),
    Unary(UnaryKind, Var),
    Scale(Var, S),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var, usize, usize),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice { input: Var, axis: usize, start: usize },
    SumAll(Var),
    SumAxis(Var, usize),
    MaxAxis { input: Var, axis: usize, argmax: Vec<usize> },
    MaskedSoftmax { input: Var, mask: Vec<bool> },
    MaskedLogSoftmax { input: Var, mask: Vec<bool> },
    MaskLogits { input: Var, mask: Vec<bool> },
    Gather { table: Var, ids: Vec<usize>, rows: RowGrad },
    Pick { input: Var, index: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node<S> {
    value: Tensor<S>,
    grad: Option<Tensor<S>>,
    requires_grad: bool,
    op: Op<S>,
}

/// Splits `shape` around `axis` into (outer, axis extent, inner).
fn split_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn mask_to_bools<S: Scalar>(mask: &Tensor<S>) -> Vec<bool> {
    mask.data().iter().map(|&m| m != S::zero()).collect()
}

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    checked: bool,
    consumed: bool,
    param_vars: Vec<Option<Var>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    /// A graph in checked mode: domain validation on every op.
    pub fn new() -> Self {
        Self::with_checks(true)
    }

    pub fn with_checks(checked: bool) -> Self {
        Self {
            nodes: Vec::new(),
            checked,
            consumed: false,
            param_vars: Vec::new(),
        }
    }

    pub fn is_checked(&self) -> bool {
        self.checked
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Input that never receives gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Free leaf that receives gradient.
    pub fn variable(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter. Repeated calls for the same id return
    /// the same node so gradients from every use accumulate in one place.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        if let Some(Some(v)) = self.param_vars.get(id.0) {
            return *v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param(id), p.trainable);
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        self.param_vars[id.0] = Some(v);
        v
    }

    // ---- elementwise -------------------------------------------------------

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        let out_shape = broadcast_shape(sa, sb).ok_or_else(|| Error::ShapeMismatch {
            op: name,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })?;
        let f = |x: S, y: S| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let data: Vec<S> = if sa == sb {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ma = broadcast_map(&out_shape, sa);
            let mb = broadcast_map(&out_shape, sb);
            ma.iter().zip(&mb).map(|(&i, &j)| f(va[i], vb[j])).collect()
        };
        if self.checked && kind == BinaryKind::Div && vb.iter().any(|&y| y == S::zero()) {
            return Err(Error::Domain {
                op: "div",
                detail: "division by zero".to_string(),
            });
        }
        let rg = self.rg(a) || self.rg(b);
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Binary(kind, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var> {
        let x = self.value(a);
        if self.checked && kind == UnaryKind::Log {
            if let Some(bad) = x.data().iter().find(|&&v| v <= S::zero()) {
                return Err(Error::Domain {
                    op: "log",
                    detail: format!("non-positive input {bad}"),
                });
            }
        }
        let value = x.map(|v| match kind {
            UnaryKind::Neg => -v,
            UnaryKind::Tanh => v.tanh(),
            UnaryKind::Sigmoid => S::one() / (S::one() + (-v).exp()),
            UnaryKind::Relu => v.max(S::zero()),
            UnaryKind::Exp => v.exp(),
            UnaryKind::Log => v.ln(),
        });
        let rg = self.rg(a);
        Ok(self.push(value, Op::Unary(kind, a), rg))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Neg, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, a)
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let value = self.value(a).map(|v| v * c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: S) -> Var {
        let value = self.value(a).map(|v| v + c);
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    /// `1 - a`, the complement used by gates and masks.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.scale(a, -S::one());
        self.add_scalar(n, S::one())
    }

    // ---- linear algebra ----------------------------------------------------

    /// Batched matrix product `[.., M, K] x [.., K, N] -> [.., M, N]` with
    /// broadcast batch extents.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let batch = broadcast_shape(ba, bb).ok_or_else(mismatch)?;
        let amap = broadcast_map(&batch, ba);
        let bmap = broadcast_map(&batch, bb);
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![S::zero(); amap.len() * m * n];
        for (bi, (&ia, &ib)) in amap.iter().zip(&bmap).enumerate() {
            let ad = &va[ia * m * k..(ia + 1) * m * k];
            let bd = &vb[ib * k * n..(ib + 1) * k * n];
            let cd = &mut out[bi * m * n..(bi + 1) * m * n];
            gemm_acc(ad, bd, cd, m, k, n);
        }
        let mut shape = batch;
        shape.push(m);
        shape.push(n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), rg))
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, a: Var, ax0: usize, ax1: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if ax0 >= shape.len() || ax1 >= shape.len() {
            return Err(Error::InvalidShape {
                op: "transpose",
                shape,
                reason: format!("axes ({ax0}, {ax1}) out of range"),
            });
        }
        let value = permute_swap(self.value(a), ax0, ax1);
        let rg = self.rg(a);
        Ok(self.push(value, Op::Transpose(a, ax0, ax1), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    // ---- structural --------------------------------------------------------

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = match parts.first() {
            Some(&p) => self.shape(p).to_vec(),
            None => {
                return Err(Error::InvalidShape {
                    op: "concat",
                    shape: Vec::new(),
                    reason: "no inputs".to_string(),
                })
            }
        };
        if axis >= first.len() {
            return Err(Error::InvalidShape {
                op: "concat",
                shape: first,
                reason: format!("axis {axis} out of range"),
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_dims(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::InvalidShape {
                op: "slice",
                shape,
                reason: format!("range {start}..{} on axis {axis}", start + len),
            });
        }
        let (outer, n, inner) = split_dims(&shape, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(new_shape, out)?,
            Op::Slice {
                input: a,
                axis,
                start,
            },
            rg,
        ))
    }

    /// Inverse of [`Graph::concat`]: pieces of the given extents along `axis`.
    pub fn split(&mut self, a: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &len in sizes {
            out.push(self.slice(a, axis, start, len)?);
            start += len;
        }
        if start != self.shape(a).get(axis).copied().unwrap_or(0) {
            return Err(Error::InvalidShape {
                op: "split",
                shape: self.shape(a).to_vec(),
                reason: format!("sizes {sizes:?} do not cover axis {axis}"),
            });
        }
        Ok(out)
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::SumAll(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = S::from_usize(self.value(a).numel().max(1));
        let s = self.sum(a);
        self.scale(s, S::one() / n)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidShape {
                op: "sum_axis",
                shape,
                reason: format!("axis {axis} out of range"),
            });
        }
        let (outer, n, inner) = split_dims(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let row = &src[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (d, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        let mut new_shape = shape;
        new_shape.remove(axis);
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(new_shape, out)?, Op::SumAxis(a, axis), rg))
    }

    /// Max over `axis`, removing it. Gradient goes to the first maximiser.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::InvalidShape {
                op: "max_axis",
                shape,
                reason: format!("axis {axis} out of range or empty"),
            });
        }
        let (outer, n, inner) = split_dims(&shape, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                let mut best_v = src[o * n * inner + i];
                for j in 1..n {
                    let v = src[(o * n + j) * inner + i];
                    if v > best_v {
                        best = j;
                        best_v = v;
                    }
                }
                out.push(best_v);
                argmax.push(best);
            }
        }
        let mut new_shape = shape;
        new_shape.remove(axis);
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(new_shape, out)?,
            Op::MaxAxis {
                input: a,
                axis,
                argmax,
            },
            rg,
        ))
    }

    // ---- masking -----------------------------------------------------------

    fn expand_mask(&self, a: Var, mask: &Tensor<S>, op: &'static str) -> Result<Vec<bool>> {
        let shape = self.shape(a);
        if mask.shape() == shape {
            return Ok(mask_to_bools(mask));
        }
        match broadcast_shape(shape, mask.shape()) {
            Some(s) if s == shape => {
                let m = broadcast_map(shape, mask.shape());
                let d = mask.data();
                Ok(m.iter().map(|&i| d[i] != S::zero()).collect())
            }
            _ => Err(Error::ShapeMismatch {
                op,
                lhs: shape.to_vec(),
                rhs: mask.shape().to_vec(),
            }),
        }
    }

    /// Softmax over the last axis restricted to positions where `mask` is
    /// non-zero. Masked positions are exactly 0; a fully masked row is all 0.
    pub fn masked_softmax(&mut self, a: Var, mask: &Tensor<S>) -> Result<Var> {
        let mask = self.expand_mask(a, mask, "masked_softmax")?;
        let x = self.value(a);
        let n = *x.shape().last().unwrap_or(&1);
        let mut out = vec![S::zero(); x.numel()];
        for (r, (row, mrow)) in x.data().chunks(n.max(1)).zip(mask.chunks(n.max(1))).enumerate() {
            let dst = &mut out[r * n..(r + 1) * n];
            softmax_row(row, mrow, dst);
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::MaskedSoftmax { input: a, mask }, rg))
    }

    /// Log-softmax over the last axis restricted to the mask. Masked positions
    /// hold [`MASK_FILL`], so their exponent is 0.
    pub fn masked_log_softmax(&mut self, a: Var, mask: &Tensor<S>) -> Result<Var> {
        let mask = self.expand_mask(a, mask, "masked_log_softmax")?;
        let x = self.value(a);
        let n = (*x.shape().last().unwrap_or(&1)).max(1);
        let fill = S::of(MASK_FILL);
        let mut out = vec![fill; x.numel()];
        for (r, (row, mrow)) in x.data().chunks(n).zip(mask.chunks(n)).enumerate() {
            let mut mx = S::neg_infinity();
            for (&v, &m) in row.iter().zip(mrow) {
                if m && v > mx {
                    mx = v;
                }
            }
            if mx == S::neg_infinity() {
                continue;
            }
            let mut z = S::zero();
            for (&v, &m) in row.iter().zip(mrow) {
                if m {
                    z += (v - mx).exp();
                }
            }
            let lse = mx + z.ln();
            for (j, (&v, &m)) in row.iter().zip(mrow).enumerate() {
                if m {
                    out[r * n + j] = v - lse;
                }
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::MaskedLogSoftmax { input: a, mask }, rg))
    }

    /// Replaces masked positions with [`MASK_FILL`]; others pass through.
    pub fn mask_logits(&mut self, a: Var, mask: &Tensor<S>) -> Result<Var> {
        let mask = self.expand_mask(a, mask, "mask_logits")?;
        let fill = S::of(MASK_FILL);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| if m { v } else { fill })
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::MaskLogits { input: a, mask }, rg))
    }

    // ---- indexing ----------------------------------------------------------

    /// Row lookup: `table[V, d]` indexed by `ids` of shape `id_shape`, giving
    /// `id_shape + [d]`.
    pub fn gather(
        &mut self,
        table: Var,
        ids: &[usize],
        id_shape: &[usize],
        rows: RowGrad,
    ) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return Err(Error::InvalidShape {
                op: "gather",
                shape: ts,
                reason: "table must be rank 2".to_string(),
            });
        }
        if id_shape.iter().product::<usize>() != ids.len() {
            return Err(Error::InvalidShape {
                op: "gather",
                shape: id_shape.to_vec(),
                reason: format!("{} ids given", ids.len()),
            });
        }
        let (v, d) = (ts[0], ts[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Domain {
                op: "gather",
                detail: format!("id {bad} outside table of {v} rows"),
            });
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let mut shape = id_shape.to_vec();
        shape.push(d);
        let rg = self.rg(table) && rows != RowGrad::Frozen && rows != RowGrad::TopK(0);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
                rows,
            },
            rg,
        ))
    }

    /// `x[.., index[r]]` for each leading row `r` of a tensor whose last axis
    /// is indexed. Output drops the last axis.
    pub fn pick(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let n = *shape.last().unwrap_or(&0);
        let rows = self.value(a).numel().checked_div(n).unwrap_or(0);
        if rows != index.len() || index.iter().any(|&i| i >= n) {
            return Err(Error::InvalidShape {
                op: "pick",
                shape,
                reason: format!("indices {index:?} do not fit"),
            });
        }
        let src = self.value(a).data();
        let out = index.iter().enumerate().map(|(r, &i)| src[r * n + i]).collect();
        let new_shape = shape[..shape.len() - 1].to_vec();
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(new_shape, out)?,
            Op::Pick {
                input: a,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse pass from a scalar `loss`. Gradients accumulate by addition on
    /// every node that requires them. A graph can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let shape = self.shape(loss).to_vec();
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.consumed = true;
        if !self.rg(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Tensor::ones(shape));
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let g = match (&node.grad, node.requires_grad) {
                (Some(g), true) => g,
                _ => continue,
            };
            backprop(node, g, before);
        }
        Ok(())
    }

    /// Adds gradients of parameter leaves into the store's accumulators.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<S>) {
        for node in &self.nodes {
            if let (Op::Param(id), Some(g)) = (&node.op, &node.grad) {
                store.get_mut(*id).grad.add_assign(g);
            }
        }
    }
}

fn softmax_row<S: Scalar>(row: &[S], mask: &[bool], dst: &mut [S]) {
    let mut mx = S::neg_infinity();
    for (&v, &m) in row.iter().zip(mask) {
        if m && v > mx {
            mx = v;
        }
    }
    if mx == S::neg_infinity() {
        return;
    }
    let mut z = S::zero();
    for ((d, &v), &m) in dst.iter_mut().zip(row).zip(mask) {
        if m {
            *d = (v - mx).exp();
            z += *d;
        }
    }
    for d in dst.iter_mut() {
        *d /= z;
    }
}

/// `c += a[m,k] * b[k,n]`, fixed summation order over `k`.
fn gemm_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c += a[m,k] * b[n,k]^T`
fn gemm_nt_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = S::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            c[i * n + j] += s;
        }
    }
}

/// `c += a[k,m]^T * b[k,n]`
fn gemm_tn_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == S::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

fn permute_swap<S: Scalar>(x: &Tensor<S>, ax0: usize, ax1: usize) -> Tensor<S> {
    let shape = x.shape();
    let mut out_shape = shape.to_vec();
    out_shape.swap(ax0, ax1);
    if ax0 == ax1 {
        return x.clone();
    }
    let in_strides = crate::tensor::strides(shape);
    let mut perm_strides = in_strides.clone();
    perm_strides.swap(ax0, ax1);
    let rank = shape.len();
    let src = x.data();
    let mut out = Vec::with_capacity(x.numel());
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..x.numel() {
        out.push(src[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += perm_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= perm_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Tensor::new(out_shape, out).expect("permutation preserves size")
}

/// Accumulator for input `v`, allocated on first use. `None` when the input
/// does not take gradient.
fn acc<S: Scalar>(before: &mut [Node<S>], v: Var) -> Option<&mut Tensor<S>> {
    let node = &mut before[v.0];
    if !node.requires_grad {
        return None;
    }
    let shape = node.value.shape().to_vec();
    Some(node.grad.get_or_insert_with(|| Tensor::zeros(shape)))
}

fn reduce_into<S: Scalar>(dst: &mut Tensor<S>, out_shape: &[usize], contrib: impl Fn(usize) -> S) {
    if dst.shape() == out_shape {
        for (i, d) in dst.data_mut().iter_mut().enumerate() {
            *d += contrib(i);
        }
    } else {
        let map = broadcast_map(out_shape, dst.shape());
        let data = dst.data_mut();
        for (i, &j) in map.iter().enumerate() {
            data[j] += contrib(i);
        }
    }
}

fn backprop<S: Scalar>(node: &Node<S>, g: &Tensor<S>, before: &mut [Node<S>]) {
    let gd = g.data();
    let out = &node.value;
    match &node.op {
        Op::Leaf | Op::Param(_) => {}
        Op::Binary(kind, a, b) => {
            let (a, b) = (*a, *b);
            let sa = before[a.0].value.shape().to_vec();
            let sb = before[b.0].value.shape().to_vec();
            let os = out.shape().to_vec();
            // operand values at each output position
            let av: Vec<S> = if sa == os {
                before[a.0].value.data().to_vec()
            } else {
                let d = before[a.0].value.data();
                broadcast_map(&os, &sa).iter().map(|&i| d[i]).collect()
            };
            let bv: Vec<S> = if sb == os {
                before[b.0].value.data().to_vec()
            } else {
                let d = before[b.0].value.data();
                broadcast_map(&os, &sb).iter().map(|&i| d[i]).collect()
            };
            if let Some(ga) = acc(before, a) {
                match kind {
                    BinaryKind::Add | BinaryKind::Sub => reduce_into(ga, &os, |i| gd[i]),
                    BinaryKind::Mul => reduce_into(ga, &os, |i| gd[i] * bv[i]),
                    BinaryKind::Div => reduce_into(ga, &os, |i| gd[i] / bv[i]),
                }
            }
            if let Some(gb) = acc(before, b) {
                match kind {
                    BinaryKind::Add => reduce_into(gb, &os, |i| gd[i]),
                    BinaryKind::Sub => reduce_into(gb, &os, |i| -gd[i]),
                    BinaryKind::Mul => reduce_into(gb, &os, |i| gd[i] * av[i]),
                    BinaryKind::Div => {
                        reduce_into(gb, &os, |i| -gd[i] * av[i] / (bv[i] * bv[i]))
                    }
                }
            }
        }
        Op::Unary(kind, a) => {
            let x = before[a.0].value.data().to_vec();
            let y = out.data();
            if let Some(ga) = acc(before, *a) {
                let gad = ga.data_mut();
                for i in 0..gad.len() {
                    let d = match kind {
                        UnaryKind::Neg => -S::one(),
                        UnaryKind::Tanh => S::one() - y[i] * y[i],
                        UnaryKind::Sigmoid => y[i] * (S::one() - y[i]),
                        UnaryKind::Relu => {
                            if x[i] > S::zero() {
                                S::one()
                            } else {
                                S::zero()
                            }
                        }
                        UnaryKind::Exp => y[i],
                        UnaryKind::Log => S::one() / x[i],
                    };
                    gad[i] += gd[i] * d;
                }
            }
        }
        Op::Scale(a, c) => {
            if let Some(ga) = acc(before, *a) {
                for (d, &v) in ga.data_mut().iter_mut().zip(gd) {
                    *d += v * *c;
                }
            }
        }
        Op::AddScalar(a) | Op::Reshape(a) => {
            if let Some(ga) = acc(before, *a) {
                for (d, &v) in ga.data_mut().iter_mut().zip(gd) {
                    *d += v;
                }
            }
        }
        Op::MatMul(a, b) => {
            let (a, b) = (*a, *b);
            let sa = before[a.0].value.shape().to_vec();
            let sb = before[b.0].value.shape().to_vec();
            let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
            let n = sb[sb.len() - 1];
            let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
            let os = out.shape();
            let batch = &os[..os.len() - 2];
            let amap = broadcast_map(batch, ba);
            let bmap = broadcast_map(batch, bb);
            let avals = before[a.0].value.data().to_vec();
            let bvals = before[b.0].value.data().to_vec();
            if let Some(ga) = acc(before, a) {
                let gad = ga.data_mut();
                for (bi, (&ia, &ib)) in amap.iter().zip(&bmap).enumerate() {
                    gemm_nt_acc(
                        &gd[bi * m * n..(bi + 1) * m * n],
                        &bvals[ib * k * n..(ib + 1) * k * n],
                        &mut gad[ia * m * k..(ia + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                }
            }
            if let Some(gb) = acc(before, b) {
                let gbd = gb.data_mut();
                for (bi, (&ia, &ib)) in amap.iter().zip(&bmap).enumerate() {
                    gemm_tn_acc(
                        &avals[ia * m * k..(ia + 1) * m * k],
                        &gd[bi * m * n..(bi + 1) * m * n],
                        &mut gbd[ib * k * n..(ib + 1) * k * n],
                        k,
                        m,
                        n,
                    );
                }
            }
        }
        Op::Transpose(a, ax0, ax1) => {
            if let Some(ga) = acc(before, *a) {
                let back = permute_swap(g, *ax0, *ax1);
                ga.add_assign(&back);
            }
        }
        Op::Concat(parts, axis) => {
            let os = out.shape();
            let (outer, total, inner) = split_dims(os, *axis);
            let mut offset = 0;
            for &p in parts {
                let len = before[p.0].value.shape()[*axis];
                if let Some(gp) = acc(before, p) {
                    let gpd = gp.data_mut();
                    for o in 0..outer {
                        let src = &gd[(o * total + offset) * inner..(o * total + offset + len) * inner];
                        for (d, &v) in gpd[o * len * inner..(o + 1) * len * inner].iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                }
                offset += len;
            }
        }
        Op::Slice { input, axis, start } => {
            let len = out.shape()[*axis];
            if let Some(ga) = acc(before, *input) {
                let (outer, n, inner) = split_dims(ga.shape(), *axis);
                let gad = ga.data_mut();
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    let src = &gd[o * len * inner..(o + 1) * len * inner];
                    for (d, &v) in gad[base..base + len * inner].iter_mut().zip(src) {
                        *d += v;
                    }
                }
            }
        }
        Op::SumAll(a) => {
            if let Some(ga) = acc(before, *a) {
                let v = gd[0];
                ga.data_mut().iter_mut().for_each(|d| *d += v);
            }
        }
        Op::SumAxis(a, axis) => {
            if let Some(ga) = acc(before, *a) {
                let (outer, n, inner) = split_dims(ga.shape(), *axis);
                let gad = ga.data_mut();
                for o in 0..outer {
                    for j in 0..n {
                        let dst = &mut gad[(o * n + j) * inner..(o * n + j + 1) * inner];
                        for (d, &v) in dst.iter_mut().zip(&gd[o * inner..(o + 1) * inner]) {
                            *d += v;
                        }
                    }
                }
            }
        }
        Op::MaxAxis {
            input,
            axis,
            argmax,
        } => {
            if let Some(ga) = acc(before, *input) {
                let (outer, n, inner) = split_dims(ga.shape(), *axis);
                let gad = ga.data_mut();
                for o in 0..outer {
                    for i in 0..inner {
                        let r = o * inner + i;
                        gad[(o * n + argmax[r]) * inner + i] += gd[r];
                    }
                }
            }
        }
        Op::MaskedSoftmax { input, mask } => {
            let y = out.data();
            let n = (*out.shape().last().unwrap_or(&1)).max(1);
            if let Some(ga) = acc(before, *input) {
                let gad = ga.data_mut();
                for r in 0..y.len() / n {
                    let span = r * n..(r + 1) * n;
                    let dot: S = y[span.clone()]
                        .iter()
                        .zip(&gd[span.clone()])
                        .map(|(&a, &b)| a * b)
                        .sum();
                    for j in span {
                        if mask[j] {
                            gad[j] += y[j] * (gd[j] - dot);
                        }
                    }
                }
            }
        }
        Op::MaskedLogSoftmax { input, mask } => {
            let y = out.data();
            let n = (*out.shape().last().unwrap_or(&1)).max(1);
            if let Some(ga) = acc(before, *input) {
                let gad = ga.data_mut();
                for r in 0..y.len() / n {
                    let span = r * n..(r + 1) * n;
                    let gsum: S = span
                        .clone()
                        .filter(|&j| mask[j])
                        .map(|j| gd[j])
                        .sum();
                    for j in span {
                        if mask[j] {
                            gad[j] += gd[j] - y[j].exp() * gsum;
                        }
                    }
                }
            }
        }
        Op::MaskLogits { input, mask } => {
            if let Some(ga) = acc(before, *input) {
                for ((d, &v), &m) in ga.data_mut().iter_mut().zip(gd).zip(mask) {
                    if m {
                        *d += v;
                    }
                }
            }
        }
        Op::Gather { table, ids, rows } => {
            let rows = *rows;
            if let Some(gt) = acc(before, *table) {
                let d = gt.shape()[1];
                let gtd = gt.data_mut();
                for (r, &id) in ids.iter().enumerate() {
                    if !rows.admits(id) {
                        continue;
                    }
                    for (dst, &v) in gtd[id * d..(id + 1) * d].iter_mut().zip(&gd[r * d..(r + 1) * d]) {
                        *dst += v;
                    }
                }
            }
        }
        Op::Pick { input, index } => {
            if let Some(ga) = acc(before, *input) {
                let n = *ga.shape().last().unwrap_or(&1);
                let gad = ga.data_mut();
                for (r, &i) in index.iter().enumerate() {
                    gad[r * n + i] += gd[r];
                }
            }
        }
    }
}
