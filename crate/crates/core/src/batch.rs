//! Index mapping, dynamic padding, shuffling and batching.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::preprocess::{Vocabulary, FEATURE_EXACT_MATCH, FEATURE_TAGS, FEATURE_TF, PAD_ID};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::text::{DataInstance, FeatureValue, Token};

/// Number of exact-match indicators per context token.
pub const EXACT_MATCH_WIDTH: usize = 3;

/// Vocabulary ids of `tokens`; unknown words map to the unknown id.
pub fn index_map(tokens: &[Token], vocab: &Vocabulary) -> Vec<usize> {
    tokens.iter().map(|t| vocab.lookup(&t.text)).collect()
}

/// Padded model input for `size` examples. Context tensors are `size x
/// context_len`, question tensors `size x question_len`, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<S> {
    pub size: usize,
    pub context_len: usize,
    pub question_len: usize,
    pub context_ids: Vec<usize>,
    pub question_ids: Vec<usize>,
    pub context_mask: Tensor<S>,
    pub question_mask: Tensor<S>,
    pub tf: Tensor<S>,
    /// `size x context_len x 3`
    pub exact_match: Tensor<S>,
    pub tag_ids: Vec<usize>,
    pub span_start: Vec<usize>,
    pub span_end: Vec<usize>,
    /// False for examples without a gold span; their labels are 0.
    pub has_span: Vec<bool>,
    pub qids: Vec<String>,
    pub context_lengths: Vec<usize>,
    pub question_lengths: Vec<usize>,
    /// Original context text and token character offsets, for decoding.
    pub contexts: Vec<String>,
    pub token_offsets: Vec<Vec<(usize, usize)>>,
}

impl<S: Scalar> Batch<S> {
    /// Pads `instances` to the longest context and question among them, or
    /// to the given minimum lengths when those are larger.
    pub fn from_instances(
        instances: &[&DataInstance],
        vocab: &Vocabulary,
        tag_vocab: Option<&Vocabulary>,
        min_lengths: (usize, usize),
    ) -> Self {
        let size = instances.len();
        let context_lengths: Vec<usize> = instances.iter().map(|i| i.context_tokens.len()).collect();
        let question_lengths: Vec<usize> = instances.iter().map(|i| i.question_tokens.len()).collect();
        let t = context_lengths.iter().copied().max().unwrap_or(0).max(min_lengths.0);
        let j = question_lengths.iter().copied().max().unwrap_or(0).max(min_lengths.1);

        let mut context_ids = vec![PAD_ID; size * t];
        let mut question_ids = vec![PAD_ID; size * j];
        let mut cmask = vec![S::zero(); size * t];
        let mut qmask = vec![S::zero(); size * j];
        let mut tf = vec![S::zero(); size * t];
        let mut em = vec![S::zero(); size * t * EXACT_MATCH_WIDTH];
        let mut tag_ids = vec![PAD_ID; size * t];
        let mut span_start = vec![0; size];
        let mut span_end = vec![0; size];
        let mut has_span = vec![false; size];

        for (b, inst) in instances.iter().enumerate() {
            for (k, id) in index_map(&inst.context_tokens, vocab).into_iter().enumerate() {
                context_ids[b * t + k] = id;
                cmask[b * t + k] = S::one();
            }
            for (k, id) in index_map(&inst.question_tokens, vocab).into_iter().enumerate() {
                question_ids[b * j + k] = id;
                qmask[b * j + k] = S::one();
            }
            if let Some(FeatureValue::PerToken(v)) = inst.feature_fields.get(FEATURE_TF) {
                for (k, &x) in v.iter().enumerate().take(context_lengths[b]) {
                    tf[b * t + k] = S::of(x);
                }
            }
            if let Some(FeatureValue::PerTokenVector(v)) = inst.feature_fields.get(FEATURE_EXACT_MATCH) {
                for (k, row) in v.iter().enumerate().take(context_lengths[b]) {
                    for (c, &x) in row.iter().enumerate().take(EXACT_MATCH_WIDTH) {
                        em[(b * t + k) * EXACT_MATCH_WIDTH + c] = S::of(x);
                    }
                }
            }
            if let (Some(tv), Some(FeatureValue::Tags(tags))) = (tag_vocab, inst.feature_fields.get(FEATURE_TAGS)) {
                for (k, tag) in tags.iter().enumerate().take(context_lengths[b]) {
                    tag_ids[b * t + k] = tv.lookup(tag);
                }
            }
            if let Some((s, e)) = inst.span() {
                span_start[b] = s;
                span_end[b] = e;
                has_span[b] = true;
            }
        }

        Batch {
            size,
            context_len: t,
            question_len: j,
            context_ids,
            question_ids,
            context_mask: Tensor::new(vec![size, t], cmask).expect("sized"),
            question_mask: Tensor::new(vec![size, j], qmask).expect("sized"),
            tf: Tensor::new(vec![size, t], tf).expect("sized"),
            exact_match: Tensor::new(vec![size, t, EXACT_MATCH_WIDTH], em).expect("sized"),
            tag_ids,
            span_start,
            span_end,
            has_span,
            qids: instances.iter().map(|i| i.qid.clone()).collect(),
            context_lengths,
            question_lengths,
            contexts: instances.iter().map(|i| i.context.clone()).collect(),
            token_offsets: instances
                .iter()
                .map(|i| i.context_tokens.iter().map(|t| (t.char_start, t.char_end)).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchConfig {
    pub batch_size: usize,
    pub shuffle: bool,
    pub seed: u64,
    /// Sort by context length inside shuffled windows of `batch_size * 16`.
    pub bucket: bool,
    /// Minimum padded (context, question) lengths.
    pub min_lengths: (usize, usize),
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            shuffle: true,
            seed: 0,
            bucket: false,
            min_lengths: (0, 0),
        }
    }
}

/// Seed for epoch `epoch`, derived so that resuming at an epoch reproduces
/// its order without stored RNG state.
pub fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ epoch.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Instance indices of each batch of one epoch. The last short batch is
/// kept.
pub fn plan_epoch(lengths: &[usize], config: &BatchConfig, epoch: u64) -> Vec<Vec<usize>> {
    let n = lengths.len();
    let bs = config.batch_size.max(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(config.seed, epoch));
    if config.shuffle {
        order.shuffle(&mut rng);
    }
    if !config.bucket {
        return order.chunks(bs).map(<[usize]>::to_vec).collect();
    }
    let window = bs * 16;
    let mut batches = Vec::with_capacity(n.div_ceil(bs));
    for chunk in order.chunks(window) {
        let mut sorted = chunk.to_vec();
        sorted.sort_by_key(|&i| lengths[i]);
        let mut group: Vec<Vec<usize>> = sorted.chunks(bs).map(<[usize]>::to_vec).collect();
        if config.shuffle {
            group.shuffle(&mut rng);
        }
        batches.extend(group);
    }
    batches
}

/// One epoch of batches, built lazily.
pub struct BatchIter<'a, S> {
    instances: &'a [DataInstance],
    vocab: &'a Vocabulary,
    tag_vocab: Option<&'a Vocabulary>,
    plan: alloc::vec::IntoIter<Vec<usize>>,
    min_lengths: (usize, usize),
    _marker: core::marker::PhantomData<S>,
}

impl<S: Scalar> Iterator for BatchIter<'_, S> {
    type Item = Batch<S>;

    fn next(&mut self) -> Option<Batch<S>> {
        let idx = self.plan.next()?;
        let members: Vec<&DataInstance> = idx.iter().map(|&i| &self.instances[i]).collect();
        Some(Batch::from_instances(&members, self.vocab, self.tag_vocab, self.min_lengths))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.plan.size_hint()
    }
}

impl<S: Scalar> ExactSizeIterator for BatchIter<'_, S> {}

/// Batches of epoch `epoch`: `ceil(N / batch_size)` of them, each padded to
/// its own longest sequences.
pub fn make_batches<'a, S: Scalar>(
    instances: &'a [DataInstance],
    vocab: &'a Vocabulary,
    tag_vocab: Option<&'a Vocabulary>,
    config: &BatchConfig,
    epoch: u64,
) -> BatchIter<'a, S> {
    let lengths: Vec<usize> = instances.iter().map(|i| i.context_tokens.len()).collect();
    BatchIter {
        instances,
        vocab,
        tag_vocab,
        plan: plan_epoch(&lengths, config, epoch).into_iter(),
        min_lengths: config.min_lengths,
        _marker: core::marker::PhantomData,
    }
}
