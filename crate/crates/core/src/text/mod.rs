//! Tokenization, character offsets and answer-span alignment.

mod instance;
mod tokenize;

pub use instance::{Answer, DataInstance, FeatureValue};
pub use tokenize::{char_span_to_token_span, char_substring, tokenize, Token};
