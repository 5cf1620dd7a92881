use alloc::vec;
use alloc::vec::Vec;

use super::{ModelConfig, SpanModel};
use crate::autodiff::Var;
use crate::batch::{Batch, EXACT_MATCH_WIDTH};
use crate::error::Result;
use crate::nn::{
    Bilinear, Builder, CellKind, Ctx, Embedding, Linear, ReduceKind, SequenceReducer, StackedBiRnn,
    VariationalDropout,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Document reader: word embeddings with a partially trainable table,
/// hand features and aligned question embeddings, stacked BiLSTM encoders
/// and bilinear start/end pointers against a weighted question summary.
#[derive(Debug, Clone)]
pub struct Drqa {
    embedding: Embedding,
    align: Linear,
    tags: Option<Embedding>,
    use_tf: bool,
    use_exact_match: bool,
    document: StackedBiRnn,
    question: StackedBiRnn,
    summary: SequenceReducer,
    start: Bilinear,
    end: Bilinear,
    dropout: VariationalDropout,
}

impl Drqa {
    pub fn new<S: Scalar>(
        b: &mut Builder<S>,
        config: &ModelConfig,
        word_vectors: Tensor<S>,
        tag_vocab_size: usize,
    ) -> Result<Self> {
        let d = word_vectors.shape()[1];
        let h = config.hidden_size;
        let tags = if config.use_tags && tag_vocab_size > 0 {
            Some(Embedding::random(&mut b.sub("tags"), tag_vocab_size, config.tag_dim)?)
        } else {
            None
        };
        let mut input = 2 * d;
        if config.use_tf {
            input += 1;
        }
        if config.use_exact_match {
            input += EXACT_MATCH_WIDTH;
        }
        if let Some(t) = &tags {
            input += t.dim;
        }
        Ok(Self {
            embedding: Embedding::from_matrix(&mut b.sub("embedding"), word_vectors, config.trainable_top_k)?,
            align: Linear::new(&mut b.sub("align"), d, d, true)?,
            tags,
            use_tf: config.use_tf,
            use_exact_match: config.use_exact_match,
            document: StackedBiRnn::new(&mut b.sub("document"), CellKind::Lstm, input, h, config.rnn_layers)?,
            question: StackedBiRnn::new(&mut b.sub("question"), CellKind::Lstm, d, h, config.rnn_layers)?,
            summary: SequenceReducer::new(&mut b.sub("summary"), ReduceKind::WeightedSum, 2 * h)?,
            start: Bilinear::new(&mut b.sub("start"), 2 * h, 2 * h)?,
            end: Bilinear::new(&mut b.sub("end"), 2 * h, 2 * h)?,
            dropout: VariationalDropout::new(config.dropout)?,
        })
    }

    /// Each context word attends over question words through a shared
    /// ReLU projection.
    fn aligned<S: Scalar>(&self, cx: &mut Ctx<S>, c: Var, q: Var, batch: &Batch<S>) -> Result<Var> {
        let pc = self.align.forward(cx, c)?;
        let pc = cx.g.relu(pc)?;
        let pq = self.align.forward(cx, q)?;
        let pq = cx.g.relu(pq)?;
        let pq_t = cx.g.transpose(pq, 1, 2)?;
        let scores = cx.g.matmul(pc, pq_t)?;
        let qmask = batch
            .question_mask
            .clone()
            .reshape(vec![batch.size, 1, batch.question_len])?;
        let alpha = cx.g.masked_softmax(scores, &qmask)?;
        cx.g.matmul(alpha, q)
    }
}

impl<S: Scalar> SpanModel<S> for Drqa {
    fn logits(&self, cx: &mut Ctx<S>, batch: &Batch<S>) -> Result<(Var, Var)> {
        let (bsz, t, j) = (batch.size, batch.context_len, batch.question_len);
        let (cm, qm) = (&batch.context_mask, &batch.question_mask);

        let c = self.embedding.forward(cx, &batch.context_ids, &[bsz, t])?;
        let q = self.embedding.forward(cx, &batch.question_ids, &[bsz, j])?;
        let c = self.dropout.forward(cx, c)?;
        let q = self.dropout.forward(cx, q)?;

        let mut parts: Vec<Var> = vec![c, self.aligned(cx, c, q, batch)?];
        if self.use_tf {
            parts.push(cx.g.constant(batch.tf.clone().reshape(vec![bsz, t, 1])?));
        }
        if self.use_exact_match {
            parts.push(cx.g.constant(batch.exact_match.clone()));
        }
        if let Some(tags) = &self.tags {
            parts.push(tags.forward(cx, &batch.tag_ids, &[bsz, t])?);
        }
        let x = cx.g.concat(&parts, 2)?;

        let drop = self.dropout;
        let doc = self.document.forward(cx, x, cm, |cx, v| drop.forward(cx, v))?;
        let qs = self.question.forward(cx, q, qm, |cx, v| drop.forward(cx, v))?;
        let qv = self.summary.forward(cx, qs, qm)?;

        let start = self.start.forward(cx, doc, qv)?;
        let end = self.end.forward(cx, doc, qv)?;
        Ok((start, end))
    }
}
