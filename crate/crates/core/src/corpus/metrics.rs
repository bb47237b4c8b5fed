//! Exact-match and token-F1 scoring with SQuAD answer normalisation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::example::QAExample;
use crate::error::{Error, Result};

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, and
/// collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punc: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punc
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(prediction: &str, truth: &str) -> bool {
    normalize_answer(prediction) == normalize_answer(truth)
}

pub fn f1_score(prediction: &str, truth: &str) -> f64 {
    let p = normalize_answer(prediction);
    let t = normalize_answer(truth);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let tt: Vec<&str> = t.split_whitespace().collect();
    if pt.is_empty() || tt.is_empty() {
        return f64::from(u8::from(pt == tt));
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for w in &tt {
        *counts.entry(w).or_default() += 1;
    }
    let mut common = 0;
    for w in &pt {
        if let Some(c) = counts.get_mut(w) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / tt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Scores in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub em: f64,
    pub f1: f64,
    pub n: usize,
}

/// Predictions against answer sets; an empty string is the null answer and
/// an answer set of `[""]` marks an unanswerable question.
pub fn evaluate_texts(predictions: &[String], truths: &[Vec<String>]) -> Result<Scores> {
    if predictions.len() != truths.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} examples",
            predictions.len(),
            truths.len()
        )));
    }
    let n = predictions.len();
    if n == 0 {
        return Ok(Scores { em: 0.0, f1: 0.0, n });
    }
    let mut em = 0.0;
    let mut f1 = 0.0;
    for (p, ts) in predictions.iter().zip(truths) {
        let ts: Vec<&str> = if ts.is_empty() { vec![""] } else { ts.iter().map(String::as_str).collect() };
        em += f64::from(u8::from(ts.iter().any(|t| exact_match(p, t))));
        f1 += ts.iter().map(|t| f1_score(p, t)).fold(0.0, f64::max);
    }
    Ok(Scores {
        em: 100.0 * em / n as f64,
        f1: 100.0 * f1 / n as f64,
        n,
    })
}

/// One prediction (text or null) per example.
pub fn evaluate(predictions: &[Option<String>], examples: &[QAExample]) -> Result<Scores> {
    let preds: Vec<String> = predictions.iter().map(|p| p.clone().unwrap_or_default()).collect();
    let truths: Vec<Vec<String>> = examples.iter().map(QAExample::ground_truths).collect();
    evaluate_texts(&preds, &truths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalisation_follows_squad_rules() {
        assert_eq!(normalize_answer("The  Cat, sat!"), "cat sat");
        assert_eq!(normalize_answer("an apple a day"), "apple day");
    }

    #[test]
    fn partial_overlap_f1() {
        assert!((f1_score("cat", "black cat") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f1_score("", ""), 1.0);
        assert_eq!(f1_score("", "cat"), 0.0);
    }
}
