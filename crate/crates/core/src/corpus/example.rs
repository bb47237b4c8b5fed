use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use super::tokenizer::{Vocabulary, CLS_ID, PAD_ID, SEP_ID};
use crate::error::{Error, Result};
use crate::model::Batch;

/// Ground-truth answer: text plus its character offset in the context.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub answer_start: usize,
}

/// Sequence layout used when packing `[CLS] Q [SEP] C [SEP]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PackingConfig {
    pub max_seq_len: usize,
    /// Question tokens kept before truncation.
    pub max_query_len: usize,
}

impl PackingConfig {
    pub fn new(max_seq_len: usize) -> Self {
        PackingConfig {
            max_seq_len,
            max_query_len: (max_seq_len / 2).min(64),
        }
    }
}

/// A tokenized question/context pair padded to a fixed length.
#[derive(Clone, Debug, PartialEq)]
pub struct QAExample {
    pub id: String,
    pub question: String,
    pub context: String,
    pub answers: Vec<Answer>,
    pub is_impossible: bool,
    /// False for augmentation pairs: no ground-truth loss applies.
    pub has_label: bool,
    /// Inclusive token span in the packed sequence; `None` is the null answer.
    pub span: Option<(usize, usize)>,
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub attention_mask: Vec<f64>,
    /// Packed position of the first context token.
    pub context_start: usize,
    /// Character range of each kept context token.
    pub context_offsets: Vec<(usize, usize)>,
}

impl QAExample {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn context_range(&self) -> RangeInclusive<usize> {
        self.context_start..=self.context_start + self.context_offsets.len() - 1
    }

    /// Training target; the null answer sits at `(0, 0)`.
    pub fn target(&self) -> (usize, usize) {
        self.span.unwrap_or((0, 0))
    }

    pub fn batch(&self) -> Batch {
        Batch {
            batch: 1,
            len: self.len(),
            token_ids: self.token_ids.clone(),
            segment_ids: self.segment_ids.clone(),
            attention_mask: self.attention_mask.clone(),
        }
    }

    /// Context text covered by a packed span; empty for the null answer or
    /// a span outside the context.
    pub fn span_text(&self, span: Option<(usize, usize)>) -> String {
        let Some((s, e)) = span else { return String::new() };
        let range = self.context_range();
        if !range.contains(&s) || !range.contains(&e) || e < s {
            return String::new();
        }
        let from = self.context_offsets[s - self.context_start].0;
        let to = self.context_offsets[e - self.context_start].1;
        self.context.chars().skip(from).take(to - from).collect()
    }

    /// Answer strings used for scoring; `[""]` for unanswerable questions.
    pub fn ground_truths(&self) -> Vec<String> {
        if self.answers.is_empty() {
            vec![String::new()]
        } else {
            self.answers.iter().map(|a| a.text.clone()).collect()
        }
    }

    /// Copy with the label removed, as used for augmentation pairs.
    pub fn unlabeled(&self) -> QAExample {
        QAExample {
            answers: Vec::new(),
            is_impossible: false,
            has_label: false,
            span: None,
            ..self.clone()
        }
    }
}

/// Tokenizes and packs one question/context pair. Contexts that do not fit
/// are truncated; an answer lost to truncation is a data error.
#[allow(clippy::too_many_arguments)]
pub fn pack_example(
    vocab: &Vocabulary,
    packing: PackingConfig,
    id: &str,
    question: &str,
    context: &str,
    answers: Vec<Answer>,
    is_impossible: bool,
    has_label: bool,
) -> Result<QAExample> {
    let l = packing.max_seq_len;
    let mut q = vocab.encode(question);
    q.truncate(packing.max_query_len);
    if q.len() + 4 > l {
        return Err(Error::Config(format!("max_seq_len {l} leaves no room for context")));
    }
    let mut c = vocab.encode_with_offsets(context);
    if c.is_empty() {
        return Err(Error::Data(format!("{id}: empty context")));
    }
    c.truncate(l - q.len() - 3);

    let mut token_ids = Vec::with_capacity(l);
    token_ids.push(CLS_ID);
    token_ids.extend_from_slice(&q);
    token_ids.push(SEP_ID);
    let context_start = token_ids.len();
    token_ids.extend(c.iter().map(|t| t.id));
    token_ids.push(SEP_ID);
    let n = token_ids.len();
    let mut segment_ids = vec![0; context_start];
    segment_ids.resize(n, 1);
    segment_ids.resize(l, 0);
    token_ids.resize(l, PAD_ID);
    let mut attention_mask = vec![1.0; n];
    attention_mask.resize(l, 0.0);

    let span = if has_label && !is_impossible {
        let a = answers
            .first()
            .ok_or_else(|| Error::Data(format!("{id}: answerable question without answers")))?;
        let from = a.answer_start;
        let to = from + a.text.chars().count();
        let first = c.iter().position(|t| t.end > from);
        let last = c.iter().rposition(|t| t.start < to);
        match (first, last) {
            (Some(s), Some(e)) if s <= e && !a.text.is_empty() && to <= context.chars().count() => {
                Some((context_start + s, context_start + e))
            }
            _ => {
                return Err(Error::Data(format!(
                    "{id}: answer {:?} at char {from} cannot be mapped to context tokens",
                    a.text
                )))
            }
        }
    } else {
        None
    };

    Ok(QAExample {
        id: id.to_string(),
        question: question.to_string(),
        context: context.to_string(),
        answers: if has_label { answers } else { Vec::new() },
        is_impossible: has_label && is_impossible,
        has_label,
        span,
        token_ids,
        segment_ids,
        attention_mask,
        context_start,
        context_offsets: c.iter().map(|t| (t.start, t.end)).collect(),
    })
}

/// Stacks examples into one batch.
pub fn batch_of<'a>(examples: impl IntoIterator<Item = &'a QAExample>) -> Result<Batch> {
    let parts: Vec<Batch> = examples.into_iter().map(QAExample::batch).collect();
    Batch::stack(&parts)
}
