use alloc::vec;

use super::{ModelConfig, SpanModel};
use crate::autodiff::Var;
use crate::batch::Batch;
use crate::error::Result;
use crate::nn::{
    bi_attention, BiRnn, Builder, Ctx, Embedding, Highway, Linear, Similarity, SimilarityKind, StackedBiRnn,
    VariationalDropout, CellKind,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Bidirectional attention flow over word embeddings (no character CNN).
#[derive(Debug, Clone)]
pub struct Bidaf {
    embedding: Embedding,
    highway: Highway,
    encoder: BiRnn,
    similarity: Similarity,
    modeling: StackedBiRnn,
    end_encoder: BiRnn,
    start_out: Linear,
    end_out: Linear,
    dropout: VariationalDropout,
}

impl Bidaf {
    pub fn new<S: Scalar>(b: &mut Builder<S>, config: &ModelConfig, word_vectors: Tensor<S>) -> Result<Self> {
        let d = word_vectors.shape()[1];
        let h = config.hidden_size;
        Ok(Self {
            embedding: Embedding::from_matrix(&mut b.sub("embedding"), word_vectors, config.trainable_top_k)?,
            highway: Highway::new(&mut b.sub("highway"), d, config.highway_layers)?,
            encoder: BiRnn::lstm(&mut b.sub("encoder"), d, h)?,
            similarity: Similarity::new(&mut b.sub("similarity"), SimilarityKind::TriLinear, 2 * h)?,
            modeling: StackedBiRnn::new(&mut b.sub("modeling"), CellKind::Lstm, 8 * h, h, 2)?,
            end_encoder: BiRnn::lstm(&mut b.sub("end_encoder"), 2 * h, h)?,
            start_out: Linear::new(&mut b.sub("start"), 10 * h, 1, true)?,
            end_out: Linear::new(&mut b.sub("end"), 10 * h, 1, true)?,
            dropout: VariationalDropout::new(config.dropout)?,
        })
    }

    fn pointer<S: Scalar>(&self, cx: &mut Ctx<S>, out: &Linear, parts: [Var; 2], bsz: usize, t: usize) -> Result<Var> {
        let x = cx.g.concat(&parts, 2)?;
        let x = self.dropout.forward(cx, x)?;
        let y = out.forward(cx, x)?;
        cx.g.reshape(y, vec![bsz, t])
    }
}

impl<S: Scalar> SpanModel<S> for Bidaf {
    fn logits(&self, cx: &mut Ctx<S>, batch: &Batch<S>) -> Result<(Var, Var)> {
        let (bsz, t, j) = (batch.size, batch.context_len, batch.question_len);
        let (cm, qm) = (&batch.context_mask, &batch.question_mask);

        let c = self.embedding.forward(cx, &batch.context_ids, &[bsz, t])?;
        let q = self.embedding.forward(cx, &batch.question_ids, &[bsz, j])?;
        let c = self.highway.forward(cx, c)?;
        let q = self.highway.forward(cx, q)?;

        let c = self.dropout.forward(cx, c)?;
        let q = self.dropout.forward(cx, q)?;
        let hc = self.encoder.forward(cx, c, cm)?.outputs;
        let uq = self.encoder.forward(cx, q, qm)?.outputs;

        let sim = self.similarity.forward(cx, hc, uq)?;
        let g = bi_attention(cx, sim, hc, uq, cm, qm)?;

        let drop = self.dropout;
        let m = self.modeling.forward(cx, g, cm, |cx, x| drop.forward(cx, x))?;
        let m_in = self.dropout.forward(cx, m)?;
        let m2 = self.end_encoder.forward(cx, m_in, cm)?.outputs;

        let start = self.pointer(cx, &self.start_out, [g, m], bsz, t)?;
        let end = self.pointer(cx, &self.end_out, [g, m2], bsz, t)?;
        Ok((start, end))
    }
}
