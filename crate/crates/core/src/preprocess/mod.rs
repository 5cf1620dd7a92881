//! Vocabulary construction, pretrained embedding matrices and linguistic
//! features.

mod embedding;
mod features;
mod vocab;

pub use embedding::{EmbeddingMatrix, EMBED_INIT_RANGE};
pub use features::{
    build_feature_vocab, extract_features, CoarseTagger, Side, Tagger, FEATURE_EXACT_MATCH,
    FEATURE_TAGS, FEATURE_TF,
};
pub use vocab::{VocabBuilder, Vocabulary, PAD, PAD_ID, UNK, UNK_ID};
