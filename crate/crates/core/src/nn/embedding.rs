use super::{Builder, Ctx};
use crate::autodiff::{RowGrad, Var};
use crate::error::Result;
use crate::params::ParamId;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Table lookup with optional partial trainability: only the `k` most
/// frequent rows (plus the unknown-word row) receive gradient. The padding
/// row is never updated and stays zero.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: RowGrad,
    pub dim: usize,
}

impl Embedding {
    /// `trainable_top_k = None` trains every row.
    pub fn from_matrix<S: Scalar>(
        b: &mut Builder<S>,
        mut matrix: Tensor<S>,
        trainable_top_k: Option<usize>,
    ) -> Result<Self> {
        let dim = matrix.shape()[1];
        matrix.data_mut()[..dim].iter_mut().for_each(|v| *v = S::zero());
        let rows = match trainable_top_k {
            None => RowGrad::All,
            Some(k) => RowGrad::TopK(k),
        };
        let trainable = !matches!(rows, RowGrad::TopK(0));
        let table = b.tensor("table", matrix, trainable)?;
        Ok(Self { table, rows, dim })
    }

    /// `ids` laid out with `shape`; output `shape + [dim]`.
    pub fn forward<S: Scalar>(&self, cx: &mut Ctx<S>, ids: &[usize], shape: &[usize]) -> Result<Var> {
        let t = cx.param(self.table);
        cx.g.gather(t, ids, shape, self.rows)
    }
}

impl Embedding {
    /// Uniform-initialized table with a zero padding row, for tag features.
    pub fn random<S: Scalar>(b: &mut Builder<S>, rows: usize, dim: usize) -> Result<Self> {
        let mut t = b.uniform_tensor(alloc::vec![rows, dim], 0.1)?;
        t.data_mut()[..dim].iter_mut().for_each(|v| *v = S::zero());
        let table = b.tensor("table", t, true)?;
        Ok(Self {
            table,
            rows: RowGrad::All,
            dim,
        })
    }
}
