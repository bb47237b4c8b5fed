//! Analytic FLOP model and wall-clock inference timing.
//!
//! A multiply-accumulate counts as 2 FLOPs. Timings cover forward passes
//! only; tokenization and IO are excluded.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Batch, InferenceModel, ModelConfig, COMPRESSION};
use crate::tensor::kernels::Element;

/// Score and weighted-sum FLOPs of one self-attention layer at length `l`:
/// `2 * heads * (l^2 * d/heads) * 2 = 4 * l^2 * d`.
pub fn attention_flops(seq_len: u64, d: u64, heads: u64) -> u64 {
    let head_dim = d / heads.max(1);
    2 * heads * (seq_len * seq_len * head_dim) * 2
}

fn dense(rows: u64, fan_in: u64, fan_out: u64) -> u64 {
    2 * rows * fan_in * fan_out
}

/// Per-component forward FLOPs for one sequence.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopModel {
    /// Embedding sum and layer norm, counted as 8 FLOPs per element.
    pub embedding: u64,
    pub convs: u64,
    /// Channel projections: expansion and skip projections.
    pub projections: u64,
    /// Q, K, V and output projections.
    pub attention_projections: u64,
    /// Score matmul plus weighted sum.
    pub attention: u64,
    pub feed_forward: u64,
    pub head: u64,
}

impl FlopModel {
    pub fn total(&self) -> u64 {
        self.embedding
            + self.convs
            + self.projections
            + self.attention_projections
            + self.attention
            + self.feed_forward
            + self.head
    }

    fn blocks(c: &ModelConfig, len: u64) -> (u64, u64, u64) {
        let (d, ff, n) = (c.hidden_size as u64, c.ff_size as u64, c.n_encoder_blocks as u64);
        (
            n * 4 * dense(len, d, d),
            n * attention_flops(len, d, c.n_heads as u64),
            n * (dense(len, d, ff) + dense(len, ff, d)),
        )
    }

    /// The compressed student at sequence length `seq_len`.
    pub fn student(c: &ModelConfig, seq_len: usize) -> Self {
        let l = seq_len as u64;
        let l4 = l / COMPRESSION as u64;
        let k = c.kernel_width as u64;
        let (e, c1, c2, f, d) = (
            c.embedding_size as u64,
            c.conv1_filters as u64,
            c.conv2_filters as u64,
            c.conv3to6_filters as u64,
            c.hidden_size as u64,
        );
        let convs = dense(l, k * e, c1)
            + dense(l / 2, k * c1, c2)
            + dense(l / 2, k * d, f)
            + dense(l, k * f, f)
            + 2 * dense(l, k * f, f);
        let mut projections = dense(l4, c2, d);
        if c2 != f {
            projections += dense(l / 2, c2, f);
        }
        if c1 != f {
            projections += dense(l, c1, f);
        }
        let (ap, at, ffn) = Self::blocks(c, l4);
        FlopModel {
            embedding: 8 * l * e,
            convs,
            projections,
            attention_projections: ap,
            attention: at,
            feed_forward: ffn,
            head: dense(l, f, 2),
        }
    }

    /// The uncompressed control at sequence length `seq_len`.
    pub fn control(c: &ModelConfig, seq_len: usize) -> Self {
        let l = seq_len as u64;
        let (e, d) = (c.embedding_size as u64, c.hidden_size as u64);
        let (ap, at, ffn) = Self::blocks(c, l);
        FlopModel {
            embedding: 8 * l * e,
            convs: 0,
            projections: dense(l, e, d),
            attention_projections: ap,
            attention: at,
            feed_forward: ffn,
            head: dense(l, d, 2),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub trials: usize,
    pub warmup: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { trials: 3, warmup: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: String,
    pub n_params: usize,
    pub precision: String,
    /// Mean seconds per pass over the dataset.
    pub avg_time: f64,
    pub stddev: f64,
    /// Baseline time over this model's time.
    pub rel_speedup: f64,
    pub baseline: String,
    pub seq_len: usize,
    pub batch_size: usize,
    pub n_examples: usize,
    pub trials: usize,
    pub warmup: usize,
    pub threads: usize,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serialises")
    }
}

/// Deterministic random-token batches with full attention masks.
pub fn synthetic_dataset(n_examples: usize, batch_size: usize, seq_len: usize, vocab_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Contract("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut left = n_examples;
    while left > 0 {
        let b = left.min(batch_size);
        let n = b * seq_len;
        let tokens = (0..n).map(|_| rng.gen_range(0..vocab_size)).collect();
        let segments = (0..n).map(|i| usize::from(i % seq_len >= seq_len / 4)).collect();
        out.push(Batch::new(b, seq_len, tokens, segments, vec![1.0; n])?);
        left -= b;
    }
    Ok(out)
}

fn precision_name<T: Element>() -> &'static str {
    if std::mem::size_of::<T>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

/// Times forward passes of `model` over `dataset`: `warmup` discarded
/// passes, then `trials` timed ones.
pub fn bench<T: Element>(name: &str, model: &InferenceModel<T>, dataset: &[Batch], opts: &BenchOptions) -> Result<BenchReport> {
    let Some(first) = dataset.first() else {
        return Err(Error::Contract("cannot benchmark an empty dataset".into()));
    };
    if opts.trials < 3 {
        return Err(Error::Contract(format!("{} trials; at least 3 required", opts.trials)));
    }
    let pass = || -> Result<f64> {
        let t = Instant::now();
        for b in dataset {
            let out = model.forward(b)?;
            std::hint::black_box(&out);
        }
        Ok(t.elapsed().as_secs_f64())
    };
    for _ in 0..opts.warmup {
        pass()?;
    }
    let times = (0..opts.trials).map(|_| pass()).collect::<Result<Vec<f64>>>()?;
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (times.len() - 1) as f64;
    Ok(BenchReport {
        model: name.to_string(),
        n_params: model.num_params(),
        precision: precision_name::<T>().to_string(),
        avg_time: mean,
        stddev: var.sqrt(),
        rel_speedup: 1.0,
        baseline: name.to_string(),
        seq_len: first.len,
        batch_size: first.batch,
        n_examples: dataset.iter().map(|b| b.batch).sum(),
        trials: opts.trials,
        warmup: opts.warmup,
        threads: 1,
    })
}

/// Sets `rel_speedup` of every report relative to the one named `baseline`.
pub fn relative_to(reports: &mut [BenchReport], baseline: &str) -> Result<()> {
    let base = reports
        .iter()
        .find(|r| r.model == baseline)
        .map(|r| r.avg_time)
        .ok_or_else(|| Error::Contract(format!("no report named {baseline:?}")))?;
    for r in reports.iter_mut() {
        r.rel_speedup = base / r.avg_time;
        r.baseline = baseline.to_string();
    }
    Ok(())
}
