//! Brute-force loop oracles shared by the unit-level and acceptance tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use waldorf::tensor::{Tensor, MASK_VALUE};

/// Valid-prefix masks of random lengths in `1..=len`.
pub fn ragged_mask(r: &mut ChaCha8Rng, batch: usize, len: usize) -> Vec<f64> {
    let mut m = vec![0.0; batch * len];
    for b in 0..batch {
        let n = r.gen_range(1..=len);
        m[b * len..b * len + n].fill(1.0);
    }
    m
}

pub fn compress(mask: &[f64], batch: usize, len: usize) -> Vec<f64> {
    waldorf::model::compress_mask(mask, batch, len).unwrap()
}

pub fn values(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-2.0..2.0)).collect()
}

pub fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Per-example MSE over valid rows of `teacher` vs `student @ w`, then batch mean.
pub fn projected_mse_oracle(
    teacher: &[f64],
    student: &[f64],
    w: &[f64],
    mask: &[f64],
    (batch, rows, cin, cout): (usize, usize, usize, usize),
) -> f64 {
    let mut total = 0.0;
    for b in 0..batch {
        let (mut s, mut n) = (0.0, 0.0);
        for t in 0..rows {
            if mask[b * rows + t] == 0.0 {
                continue;
            }
            for c in 0..cout {
                let mut p = 0.0;
                for k in 0..cin {
                    p += student[(b * rows + t) * cin + k] * w[k * cout + c];
                }
                s += (teacher[(b * rows + t) * cout + c] - p).powi(2);
                n += 1.0;
            }
        }
        if n > 0.0 {
            total += s / n;
        }
    }
    total / batch as f64
}

pub fn avgpool_oracle(x: &[f64], mask: &[f64], batch: usize, len: usize, ch: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for b in 0..batch {
        for p in 0..len / 4 {
            for c in 0..ch {
                let members: Vec<f64> = (4 * p..4 * p + 4)
                    .filter(|&t| mask[b * len + t] != 0.0)
                    .map(|t| x[(b * len + t) * ch + c])
                    .collect();
                out.push(if members.is_empty() {
                    0.0
                } else {
                    members.iter().sum::<f64>() / members.len() as f64
                });
            }
        }
    }
    out
}

/// Enumerates the valid members of every window explicitly.
pub fn attention_loss_oracle(teacher: &[f64], student: &[f64], mask: &[f64], batch: usize, heads: usize, len: usize) -> f64 {
    let m = len / 4;
    let mut total = 0.0;
    for b in 0..batch {
        let (mut s, mut n) = (0.0, 0.0);
        for h in 0..heads {
            for a in 0..m {
                for c in 0..m {
                    let mut members = Vec::new();
                    for q in 4 * a..4 * a + 4 {
                        for k in 4 * c..4 * c + 4 {
                            if mask[b * len + q] != 0.0 && mask[b * len + k] != 0.0 {
                                members.push(teacher[((b * heads + h) * len + q) * len + k]);
                            }
                        }
                    }
                    if members.is_empty() {
                        continue;
                    }
                    let mx = members.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    s += (mx - student[((b * heads + h) * m + a) * m + c]).powi(2);
                    n += 1.0;
                }
            }
        }
        total += s / n;
    }
    total / batch as f64
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn distill_oracle(zt: [&[f64]; 2], zs: [&[f64]; 2], batch: usize, len: usize, t: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..2 {
        for b in 0..batch {
            let row = |z: &[f64]| z[b * len..(b + 1) * len].iter().map(|v| v / t).collect::<Vec<_>>();
            let p = softmax(&row(zt[k]));
            let q = softmax(&row(zs[k]));
            let ce: f64 = p.iter().zip(&q).filter(|(pi, _)| **pi > 0.0).map(|(pi, qi)| -pi * qi.ln()).sum();
            total += ce;
        }
    }
    t * t * total / (2.0 * batch as f64)
}

pub fn masked_logits(r: &mut ChaCha8Rng, mask: &[f64], scale: f64) -> Vec<f64> {
    mask.iter()
        .map(|&m| if m != 0.0 { r.gen_range(-scale..scale) } else { MASK_VALUE })
        .collect()
}

/// Max over the valid (query, key) pairs of each 4x4 window, 0 where a
/// window has none; second value flags windows with a valid pair.
pub fn maxpool_oracle(scores: &[f64], mask: &[f64], batch: usize, heads: usize, len: usize) -> (Vec<f64>, Vec<f64>) {
    let m = len / 4;
    let mut pooled = vec![0.0; batch * heads * m * m];
    let mut cells = vec![0.0; batch * m * m];
    for b in 0..batch {
        for a in 0..m {
            for c in 0..m {
                let mut members = Vec::new();
                for q in 4 * a..4 * a + 4 {
                    for k in 4 * c..4 * c + 4 {
                        if mask[b * len + q] != 0.0 && mask[b * len + k] != 0.0 {
                            members.push((q, k));
                        }
                    }
                }
                if members.is_empty() {
                    continue;
                }
                cells[(b * m + a) * m + c] = 1.0;
                for h in 0..heads {
                    pooled[((b * heads + h) * m + a) * m + c] = members
                        .iter()
                        .map(|&(q, k)| scores[((b * heads + h) * len + q) * len + k])
                        .fold(f64::NEG_INFINITY, f64::max);
                }
            }
        }
    }
    (pooled, cells)
}

pub fn span_oracle(s: &[f64], e: &[f64], lo: usize, hi: usize, max_len: usize, thr: f64) -> Option<(usize, usize)> {
    let mut best = None;
    let mut best_score = f64::NEG_INFINITY;
    for a in lo..=hi {
        for b in lo..=hi {
            if b < a || b - a > max_len {
                continue;
            }
            if s[a] + e[b] > best_score {
                best_score = s[a] + e[b];
                best = Some((a, b));
            }
        }
    }
    if s[0] + e[0] > best_score + thr {
        None
    } else {
        best
    }
}
