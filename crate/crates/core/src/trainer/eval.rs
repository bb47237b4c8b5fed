use crate::corpus::{batch_of, evaluate, QAExample, Scores};
use crate::error::{Error, Result};
use crate::model::{predict_span, InferenceModel, SpanConstraints, StudentModel};
use crate::teacher::TeacherModel;

/// Decoding settings shared by every model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeOptions {
    pub batch_size: usize,
    pub max_answer_len: usize,
    pub null_threshold: f64,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            batch_size: 32,
            max_answer_len: 30,
            null_threshold: 0.0,
        }
    }
}

/// Answer text (or `None` for the null answer) from per-example logits.
pub fn decode_answers(
    examples: &[QAExample],
    start: &[f64],
    end: &[f64],
    opts: &DecodeOptions,
) -> Result<Vec<Option<String>>> {
    let Some(first) = examples.first() else { return Ok(Vec::new()) };
    let len = first.len();
    if start.len() != examples.len() * len || end.len() != start.len() {
        return Err(Error::dim(format!(
            "{} logits for {} examples of length {len}",
            start.len(),
            examples.len()
        )));
    }
    Ok(examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let c = SpanConstraints {
                context: ex.context_range(),
                max_answer_len: opts.max_answer_len,
            };
            let row = i * len..(i + 1) * len;
            predict_span(&start[row.clone()], &end[row], &c, opts.null_threshold).map(|s| ex.span_text(Some(s)))
        })
        .collect())
}

fn predict_with(
    examples: &[QAExample],
    opts: &DecodeOptions,
    mut logits: impl FnMut(&[QAExample]) -> Result<(Vec<f64>, Vec<f64>)>,
) -> Result<Vec<Option<String>>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(opts.batch_size.max(1)) {
        let (s, e) = logits(chunk)?;
        out.extend(decode_answers(chunk, &s, &e, opts)?);
    }
    Ok(out)
}

pub fn predict_student(model: &StudentModel, examples: &[QAExample], opts: &DecodeOptions) -> Result<Vec<Option<String>>> {
    let engine = InferenceModel::<f64>::student(model);
    predict_with(examples, opts, |chunk| engine.forward(&batch_of(chunk)?))
}

pub fn predict_teacher(model: &TeacherModel, examples: &[QAExample], opts: &DecodeOptions) -> Result<Vec<Option<String>>> {
    predict_with(examples, opts, |chunk| {
        let (s, e) = model.logits(&batch_of(chunk)?)?;
        Ok((s.into_data(), e.into_data()))
    })
}

pub fn evaluate_student(model: &StudentModel, examples: &[QAExample], opts: &DecodeOptions) -> Result<Scores> {
    evaluate(&predict_student(model, examples, opts)?, examples)
}

pub fn evaluate_teacher(model: &TeacherModel, examples: &[QAExample], opts: &DecodeOptions) -> Result<Scores> {
    evaluate(&predict_teacher(model, examples, opts)?, examples)
}

/// Score of always answering null.
pub fn majority_null_scores(examples: &[QAExample]) -> Result<Scores> {
    evaluate(&vec![None; examples.len()], examples)
}
