use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A token with its position in the source text. Offsets count Unicode
/// scalar values (the unit SQuAD uses for `answer_start`); `char_end` is
/// exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Splits on whitespace, then makes every punctuation character its own
/// token. Any character that is neither alphanumeric nor whitespace counts
/// as punctuation.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let flush = |current: &mut String, start: usize, end: usize, tokens: &mut Vec<Token>| {
        if !current.is_empty() {
            tokens.push(Token {
                text: core::mem::take(current),
                char_start: start,
                char_end: end,
            });
        }
    };
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            flush(&mut current, start, i, &mut tokens);
        } else if is_punct(c) {
            flush(&mut current, start, i, &mut tokens);
            let mut s = String::new();
            s.push(c);
            tokens.push(Token {
                text: s,
                char_start: i,
                char_end: i + 1,
            });
        } else {
            if current.is_empty() {
                start = i;
            }
            current.push(c);
        }
    }
    let n = text.chars().count();
    flush(&mut current, start, n, &mut tokens);
    tokens
}

/// Characters `start..end` of `text`, counted in Unicode scalar values.
pub fn char_substring(text: &str, start: usize, end: usize) -> &str {
    let mut indices = text.char_indices().map(|(b, _)| b).chain(core::iter::once(text.len()));
    let b0 = indices.nth(start).unwrap_or(text.len());
    let b1 = if end > start {
        indices.nth(end - start - 1).unwrap_or(text.len())
    } else {
        b0
    };
    &text[b0..b1]
}

/// Smallest inclusive token interval covering the answer characters
/// `[answer_start, answer_start + len(answer_text))`.
pub fn char_span_to_token_span(
    tokens: &[Token],
    answer_start: usize,
    answer_text: &str,
) -> Result<(usize, usize)> {
    let end = answer_start + answer_text.chars().count();
    let err = Error::Alignment {
        start: answer_start,
        end,
    };
    if end <= answer_start {
        return Err(err);
    }
    let first = tokens.iter().position(|t| t.char_end > answer_start);
    let last = tokens.iter().rposition(|t| t.char_start < end);
    match (first, last) {
        (Some(s), Some(e)) if s <= e => Ok((s, e)),
        _ => Err(err),
    }
}
