use std::ops::RangeInclusive;

/// Where a predicted span may lie.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanConstraints {
    /// Token positions of the context inside the packed sequence.
    pub context: RangeInclusive<usize>,
    /// Largest allowed `end - start`.
    pub max_answer_len: usize,
}

/// Best-scoring span, or `None` for the null answer.
///
/// The null score is `start[0] + end[0]`; it wins when it exceeds the best
/// span score plus `null_threshold`. Ties between spans keep the earliest
/// `(start, end)` pair.
pub fn predict_span(
    start_logits: &[f64],
    end_logits: &[f64],
    constraints: &SpanConstraints,
    null_threshold: f64,
) -> Option<(usize, usize)> {
    let len = start_logits.len().min(end_logits.len());
    let lo = *constraints.context.start();
    let hi = (*constraints.context.end()).min(len.saturating_sub(1));
    let mut best: Option<((usize, usize), f64)> = None;
    if len > 0 && lo <= hi {
        for s in lo..=hi {
            let last = hi.min(s + constraints.max_answer_len);
            for e in s..=last {
                let score = start_logits[s] + end_logits[e];
                if best.map_or(true, |(_, b)| score > b) {
                    best = Some(((s, e), score));
                }
            }
        }
    }
    let (span, score) = best?;
    let null_score = start_logits[0] + end_logits[0];
    if null_score > score + null_threshold {
        None
    } else {
        Some(span)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(len: usize, at: usize) -> Vec<f64> {
        (0..len).map(|i| if i == at { 10.0 } else { 0.0 }).collect()
    }

    #[test]
    fn picks_one_hot_span() {
        let c = SpanConstraints { context: 3..=12, max_answer_len: 30 };
        assert_eq!(predict_span(&one_hot(16, 5), &one_hot(16, 7), &c, 0.0), Some((5, 7)));
    }

    #[test]
    fn dominant_cls_logits_give_null() {
        let c = SpanConstraints { context: 3..=12, max_answer_len: 30 };
        let mut s = one_hot(16, 5);
        let mut e = one_hot(16, 7);
        s[0] = 50.0;
        e[0] = 50.0;
        assert_eq!(predict_span(&s, &e, &c, 0.0), None);
        // a large enough threshold keeps the span
        assert_eq!(predict_span(&s, &e, &c, 100.0), Some((5, 7)));
    }

    #[test]
    fn end_before_start_is_never_chosen() {
        let c = SpanConstraints { context: 1..=7, max_answer_len: 30 };
        assert_eq!(predict_span(&one_hot(8, 6), &one_hot(8, 2), &c, 1e9).map(|(s, e)| s <= e), Some(true));
    }
}
