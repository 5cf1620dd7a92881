use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vocab::{Vocabulary, PAD_ID};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Half-width of the uniform init for words missing from the pretrained file.
pub const EMBED_INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct EmbeddingMatrix<S> {
    /// `|V| x dim`, row `i` for vocabulary id `i`.
    pub matrix: Tensor<S>,
    pub dim: usize,
    /// Vocabulary words found in the pretrained file.
    pub hit_count: usize,
    /// Repeated words in the file; the first occurrence was kept.
    pub duplicate_count: usize,
}

impl<S: Scalar> EmbeddingMatrix<S> {
    /// Random matrix for training without pretrained vectors: every row but
    /// padding drawn from the seeded uniform init.
    pub fn random(vocab: &Vocabulary, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![S::zero(); vocab.len() * dim];
        for row in 1..vocab.len() {
            for v in &mut data[row * dim..(row + 1) * dim] {
                *v = S::of(rng.random_range(-EMBED_INIT_RANGE..EMBED_INIT_RANGE));
            }
        }
        Self {
            matrix: Tensor::new(vec![vocab.len(), dim], data).expect("sized"),
            dim,
            hit_count: 0,
            duplicate_count: 0,
        }
    }

    /// Builds the matrix from text lines `word v1 ... vd`. A leading
    /// `count dim` header line is skipped. Rows of words absent from the
    /// file are drawn in id order from the seeded uniform init; the padding
    /// row is zero.
    pub fn from_lines<'a>(
        vocab: &Vocabulary,
        lines: impl IntoIterator<Item = &'a str>,
        seed: u64,
    ) -> Result<Self> {
        let mut dim: Option<usize> = None;
        let mut rows: Vec<Option<Vec<S>>> = vec![None; vocab.len()];
        let mut duplicates = 0;
        let mut seen_words = alloc::collections::BTreeSet::new();
        for (i, line) in lines.into_iter().enumerate() {
            let line_no = i + 1;
            let line = line.trim_end_matches(['\n', '\r']);
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(' ').filter(|f| !f.is_empty());
            let word = fields.next().unwrap_or_default();
            let values: Vec<&str> = fields.collect();
            if i == 0 && values.len() == 1 && word.parse::<usize>().is_ok() && values[0].parse::<usize>().is_ok() {
                dim = values[0].parse().ok();
                continue;
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::Format {
                        line: line_no,
                        detail: format!("expected {d} values, found {}", values.len()),
                    })
                }
                _ => {}
            }
            if !seen_words.insert(word) {
                duplicates += 1;
                continue;
            }
            if !vocab.contains(word) {
                continue;
            }
            let id = vocab.lookup(word);
            let vec = values
                .iter()
                .map(|v| {
                    S::parse_decimal(v).ok_or_else(|| Error::Format {
                        line: line_no,
                        detail: format!("bad number {v:?}"),
                    })
                })
                .collect::<Result<Vec<S>>>()?;
            if id != PAD_ID && rows[id].is_none() {
                rows[id] = Some(vec);
            }
        }
        let dim = match dim {
            Some(d) if d > 0 => d,
            _ => {
                return Err(Error::Format {
                    line: 0,
                    detail: "no embedding vectors found".into(),
                })
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(vocab.len() * dim);
        let mut hits = 0;
        for (id, row) in rows.into_iter().enumerate() {
            match row {
                _ if id == PAD_ID => data.extend(core::iter::repeat_n(S::zero(), dim)),
                Some(v) => {
                    hits += 1;
                    data.extend(v);
                }
                None => {
                    for _ in 0..dim {
                        data.push(S::of(rng.random_range(-EMBED_INIT_RANGE..EMBED_INIT_RANGE)));
                    }
                }
            }
        }
        Ok(Self {
            matrix: Tensor::new(vec![vocab.len(), dim], data)?,
            dim,
            hit_count: hits,
            duplicate_count: duplicates,
        })
    }
}
