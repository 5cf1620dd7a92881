//! Exact-match and token-F1 scoring with the official SQuAD normalization.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::text::DataInstance;

/// qid -> predicted answer text.
pub type PredictionSet = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Percentage in [0, 100].
    pub exact_match: f64,
    /// Percentage in [0, 100].
    pub f1: f64,
    #[serde(skip)]
    pub n_evaluated: usize,
    /// Questions without a prediction; scored as wrong.
    #[serde(skip)]
    pub missing: Vec<String>,
    /// Predictions whose qid is not in the gold set; ignored.
    #[serde(skip)]
    pub unmatched: Vec<String>,
}

fn is_python_punct(c: char) -> bool {
    c.is_ascii_punctuation()
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Lowercase, remove ASCII punctuation, drop the articles a/an/the, and
/// collapse whitespace, in that order.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let no_punct: String = lowered.chars().filter(|&c| !is_python_punct(c)).collect();

    // articles are whole runs of word characters
    let mut no_articles = String::with_capacity(no_punct.len());
    let chars: Vec<char> = no_punct.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if is_word_char(chars[i]) {
            let start = i;
            while i < chars.len() && is_word_char(chars[i]) {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            if matches!(word.as_str(), "a" | "an" | "the") {
                no_articles.push(' ');
            } else {
                no_articles.push_str(&word);
            }
        } else {
            no_articles.push(chars[i]);
            i += 1;
        }
    }

    let mut out = String::with_capacity(no_articles.len());
    for (k, w) in no_articles.split_whitespace().enumerate() {
        if k > 0 {
            out.push(' ');
        }
        out.push_str(w);
    }
    out
}

pub fn exact_match_score(prediction: &str, gold: &str) -> bool {
    normalize_answer(prediction) == normalize_answer(gold)
}

/// Token-multiset F1 between normalized answers. Both empty scores 1;
/// exactly one empty scores 0.
pub fn f1_score(prediction: &str, gold: &str) -> f64 {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return if pt.is_empty() && gt.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for &t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut same = 0usize;
    for &t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return 0.0;
    }
    let precision = same as f64 / pt.len() as f64;
    let recall = same as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Max of `metric` over the gold answers.
pub fn metric_max_over_golds(metric: impl Fn(&str, &str) -> f64, prediction: &str, golds: &[String]) -> f64 {
    golds
        .iter()
        .map(|g| metric(prediction, g))
        .fold(0.0, f64::max)
}

/// Gold answers per question, in first-seen order. Unanswerable questions
/// get the single gold answer `""`.
pub fn gold_table(instances: &[DataInstance]) -> Vec<(String, Vec<String>)> {
    let mut order: Vec<(String, Vec<String>)> = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for inst in instances {
        if seen.contains_key(&inst.qid) {
            continue;
        }
        let golds = if inst.is_impossible || inst.gold_answers.is_empty() {
            vec![String::new()]
        } else {
            inst.gold_answers.clone()
        };
        seen.insert(inst.qid.clone(), order.len());
        order.push((inst.qid.clone(), golds));
    }
    order
}

/// Scores `preds` against a gold table.
pub fn evaluate_golds(golds: &[(String, Vec<String>)], preds: &PredictionSet) -> EvalResult {
    let mut em = 0.0;
    let mut f1 = 0.0;
    let mut missing = Vec::new();
    let mut known = BTreeSet::new();
    for (qid, answers) in golds {
        known.insert(qid.as_str());
        match preds.get(qid) {
            Some(p) => {
                em += metric_max_over_golds(|a, b| exact_match_score(a, b) as u8 as f64, p, answers);
                f1 += metric_max_over_golds(f1_score, p, answers);
            }
            None => missing.push(qid.clone()),
        }
    }
    let unmatched = preds
        .keys()
        .filter(|k| !known.contains(k.as_str()))
        .cloned()
        .collect();
    let n = golds.len();
    let scale = if n == 0 { 0.0 } else { 100.0 / n as f64 };
    EvalResult {
        exact_match: em * scale,
        f1: f1 * scale,
        n_evaluated: n,
        missing,
        unmatched,
    }
}

/// Groups instances by qid (all gold answers retained) and scores `preds`.
pub fn evaluate(instances: &[DataInstance], preds: &PredictionSet) -> EvalResult {
    evaluate_golds(&gold_table(instances), preds)
}
