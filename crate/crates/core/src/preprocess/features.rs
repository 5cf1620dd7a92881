use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::vocab::{VocabBuilder, Vocabulary};
use crate::error::Result;
use crate::text::{DataInstance, FeatureValue, Token};

pub const FEATURE_TF: &str = "tf";
pub const FEATURE_EXACT_MATCH: &str = "exact_match";
pub const FEATURE_TAGS: &str = "tags";

/// Source of discrete per-token tags and of the normalized (lemma) form used
/// by the third exact-match indicator.
pub trait Tagger {
    fn tags(&self, tokens: &[Token]) -> Vec<String>;
    fn lemma(&self, word: &str) -> String;
}

/// Rule-based tagger with four classes: `NUM`, `PUNCT`, `CAP`, `WORD`.
/// Its lemma is the lowercase form with a plural suffix stripped.
#[derive(Debug, Clone, Copy, Default)]
pub struct CoarseTagger;

impl Tagger for CoarseTagger {
    fn tags(&self, tokens: &[Token]) -> Vec<String> {
        tokens
            .iter()
            .map(|t| {
                let mut chars = t.text.chars();
                let first = chars.clone().next().unwrap_or(' ');
                let tag = if t.text.chars().any(|c| c.is_numeric())
                    && t.text.chars().all(|c| c.is_numeric() || c == '.' || c == ',')
                {
                    "NUM"
                } else if !first.is_alphanumeric() && chars.nth(1).is_none() {
                    "PUNCT"
                } else if first.is_uppercase() {
                    "CAP"
                } else {
                    "WORD"
                };
                tag.to_string()
            })
            .collect()
    }

    fn lemma(&self, word: &str) -> String {
        let w = word.to_lowercase();
        let n = w.chars().count();
        if n > 4 && w.ends_with("ies") {
            let mut s = w[..w.len() - 3].to_string();
            s.push('y');
            s
        } else if n > 3 && w.ends_with('s') && !w.ends_with("ss") {
            w[..w.len() - 1].to_string()
        } else {
            w
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Context,
    Question,
}

impl Side {
    fn key(self, name: &str) -> String {
        match self {
            Side::Context => name.to_string(),
            Side::Question => alloc::format!("question_{name}"),
        }
    }
}

/// Adds normalized term frequency, the three exact-match indicators
/// (original, lowercase, lemma) against the other text, and tags when a
/// tagger is configured. Context-side keys are `tf`, `exact_match`, `tags`;
/// question-side keys carry a `question_` prefix.
pub fn extract_features(instance: &mut DataInstance, side: Side, tagger: Option<&dyn Tagger>) {
    let (own, other) = match side {
        Side::Context => (&instance.context_tokens, &instance.question_tokens),
        Side::Question => (&instance.question_tokens, &instance.context_tokens),
    };
    let lower: Vec<String> = own.iter().map(|t| t.text.to_lowercase()).collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for w in &lower {
        *counts.entry(w.as_str()).or_default() += 1;
    }
    let n = own.len().max(1) as f64;
    let tf: Vec<f64> = lower.iter().map(|w| counts[w.as_str()] as f64 / n).collect();

    let orig_set: BTreeSet<&str> = other.iter().map(|t| t.text.as_str()).collect();
    let lower_set: BTreeSet<String> = other.iter().map(|t| t.text.to_lowercase()).collect();
    let lemma = |w: &str| match tagger {
        Some(t) => t.lemma(w),
        None => CoarseTagger.lemma(w),
    };
    let lemma_set: BTreeSet<String> = other.iter().map(|t| lemma(&t.text)).collect();
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let em: Vec<Vec<f64>> = own
        .iter()
        .zip(&lower)
        .map(|(t, l)| {
            alloc::vec![
                flag(orig_set.contains(t.text.as_str())),
                flag(lower_set.contains(l)),
                flag(lemma_set.contains(&lemma(&t.text))),
            ]
        })
        .collect();
    let tags = tagger.map(|t| t.tags(own));

    let fields = &mut instance.feature_fields;
    fields.insert(side.key(FEATURE_TF), FeatureValue::PerToken(tf));
    fields.insert(side.key(FEATURE_EXACT_MATCH), FeatureValue::PerTokenVector(em));
    if let Some(tags) = tags {
        fields.insert(side.key(FEATURE_TAGS), FeatureValue::Tags(tags));
    }
}

/// Tag vocabulary for one discrete feature field, built from training
/// instances only. Unseen tags map to the unknown index.
pub fn build_feature_vocab(instances: &[DataInstance], field: &str) -> Result<Vocabulary> {
    let tags: Vec<&str> = instances
        .iter()
        .filter_map(|inst| match inst.feature_fields.get(field) {
            Some(FeatureValue::Tags(t)) => Some(t),
            _ => None,
        })
        .flat_map(|t| t.iter().map(String::as_str))
        .collect();
    VocabBuilder::default().build_from_tokens(tags)
}
