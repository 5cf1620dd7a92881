//! Row-major dense tensors and broadcasting helpers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidShape {
                op: "tensor",
                shape,
                reason: format!("expected {numel} elements, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| S::of(v)).collect())
    }

    pub fn full(shape: Vec<usize>, value: S) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        Self::full(shape, S::one())
    }

    pub fn scalar(value: S) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> S {
        self.data[0]
    }

    pub fn at(&self, index: &[usize]) -> S {
        self.data[flat_index(&self.shape, index)]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::InvalidShape {
                op: "reshape",
                shape,
                reason: format!("cannot view {:?} with that shape", self.shape),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::of(v.as_f64())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<S>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn sq_norm(&self) -> S {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        out[i] = out[i + 1] * shape[i + 1];
    }
    out
}

pub fn flat_index(shape: &[usize], index: &[usize]) -> usize {
    debug_assert_eq!(shape.len(), index.len());
    let mut flat = 0;
    for (&i, &n) in index.iter().zip(shape) {
        debug_assert!(i < n);
        flat = flat * n + i;
    }
    flat
}

/// Trailing-dimension (numpy) broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            _ if da == db => da,
            (1, _) => db,
            (_, 1) => da,
            _ => return None,
        };
    }
    Some(out)
}

/// For each flat position of `out_shape`, the flat position of the
/// broadcast source with `in_shape`. `in_shape` must broadcast to `out_shape`.
pub fn broadcast_map(out_shape: &[usize], in_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - in_shape.len();
    let in_strides = strides(in_shape);
    // effective stride per output axis: 0 where the source is broadcast
    let eff: Vec<usize> = (0..rank)
        .map(|i| {
            if i < offset || in_shape[i - offset] == 1 {
                0
            } else {
                in_strides[i - offset]
            }
        })
        .collect();
    let numel: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..numel {
        map.push(src);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}
