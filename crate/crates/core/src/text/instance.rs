use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::tokenize::{char_span_to_token_span, char_substring, tokenize, Token};
use crate::error::{Error, Result};

/// A gold answer as it appears in the source dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub answer_start: usize,
}

/// Value of an extracted feature attached to an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureValue {
    Scalar(f64),
    PerToken(Vec<f64>),
    PerTokenVector(Vec<Vec<f64>>),
    Tags(Vec<String>),
}

/// One (context, question, answer) record. Field names are the same for
/// every dataset reader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataInstance {
    pub qid: String,
    pub context: String,
    pub question: String,
    pub context_tokens: Vec<Token>,
    pub question_tokens: Vec<Token>,
    /// Training answer (the first gold answer).
    pub answer_text: String,
    pub answer_start: Option<usize>,
    pub span_start: Option<usize>,
    pub span_end: Option<usize>,
    /// Every gold answer text, kept for evaluation.
    pub gold_answers: Vec<String>,
    pub is_impossible: bool,
    #[serde(default)]
    pub feature_fields: BTreeMap<String, FeatureValue>,
}

impl DataInstance {
    /// Tokenizes both texts and labels the span of the first answer. An
    /// unanswerable question (or one with no answers) gets no span.
    pub fn build(
        qid: impl Into<String>,
        context: impl Into<String>,
        question: impl Into<String>,
        answers: &[Answer],
        is_impossible: bool,
    ) -> Result<Self> {
        let context = context.into();
        let question = question.into();
        let context_tokens = tokenize(&context);
        let question_tokens = tokenize(&question);
        let first = if is_impossible { None } else { answers.first() };
        let (answer_text, answer_start, span) = match first {
            Some(a) => {
                let n = context.chars().count();
                let len = a.text.chars().count();
                if a.answer_start + len > n
                    || char_substring(&context, a.answer_start, a.answer_start + len) != a.text
                {
                    return Err(Error::Alignment {
                        start: a.answer_start,
                        end: a.answer_start + len,
                    });
                }
                let span = char_span_to_token_span(&context_tokens, a.answer_start, &a.text)?;
                (a.text.clone(), Some(a.answer_start), Some(span))
            }
            None => (String::new(), None, None),
        };
        Ok(Self {
            qid: qid.into(),
            context,
            question,
            context_tokens,
            question_tokens,
            answer_text,
            answer_start,
            span_start: span.map(|s| s.0),
            span_end: span.map(|s| s.1),
            gold_answers: answers.iter().map(|a| a.text.clone()).collect(),
            is_impossible,
            feature_fields: BTreeMap::new(),
        })
    }

    pub fn span(&self) -> Option<(usize, usize)> {
        self.span_start.zip(self.span_end)
    }

    /// Context text covered by tokens `start..=end`, taken from the original
    /// character offsets.
    pub fn context_span_text(&self, start: usize, end: usize) -> &str {
        let s = self.context_tokens[start].char_start;
        let e = self.context_tokens[end].char_end;
        char_substring(&self.context, s, e)
    }

    /// Checks span bounds and token offsets against the source texts.
    pub fn validate(&self) -> Result<()> {
        if let Some((s, e)) = self.span() {
            if !(s <= e && e < self.context_tokens.len()) {
                return Err(Error::Alignment { start: s, end: e });
            }
        }
        for (text, toks) in [
            (&self.context, &self.context_tokens),
            (&self.question, &self.question_tokens),
        ] {
            let mut prev_end = 0;
            for t in toks.iter() {
                if t.char_start < prev_end
                    || t.char_end <= t.char_start
                    || char_substring(text, t.char_start, t.char_end) != t.text
                {
                    return Err(Error::Alignment {
                        start: t.char_start,
                        end: t.char_end,
                    });
                }
                prev_end = t.char_end;
            }
        }
        Ok(())
    }
}
