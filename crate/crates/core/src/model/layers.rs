//! Graph building blocks shared by the student, the teacher and the control.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batch::Batch;
use super::params::{BoundParams, Init};
use crate::error::Result;
use crate::tensor::{Graph, Var};

/// Dropout state threaded through a forward pass.
pub struct Dropout {
    pub p: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn none() -> Self {
        Dropout {
            p: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn new(p: f64, seed: u64) -> Self {
        Dropout {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn apply(&mut self, g: &mut Graph, x: &Var) -> Result<Var> {
        g.dropout(x, self.p, &mut self.rng)
    }
}

pub fn linear(g: &mut Graph, p: &BoundParams, prefix: &str, x: &Var) -> Result<Var> {
    let y = g.matmul(x, p.var(&format!("{prefix}.weight")))?;
    g.add(&y, p.var(&format!("{prefix}.bias")))
}

pub fn layer_norm(g: &mut Graph, p: &BoundParams, prefix: &str, x: &Var, eps: f64) -> Result<Var> {
    g.layer_norm(
        x,
        p.var(&format!("{prefix}.gain")),
        p.var(&format!("{prefix}.bias")),
        eps,
    )
}

pub fn conv(g: &mut Graph, p: &BoundParams, prefix: &str, x: &Var) -> Result<Var> {
    g.conv1d(
        x,
        p.var(&format!("{prefix}.weight")),
        p.var(&format!("{prefix}.bias")),
    )
}

pub(crate) fn init_embeddings(init: &mut Init, vocab: usize, positions: usize, segments: usize, width: usize) {
    init.normal("embeddings.token", &[vocab, width]);
    init.normal("embeddings.position", &[positions, width]);
    init.normal("embeddings.segment", &[segments, width]);
    init.layer_norm("embeddings.ln", width);
}

/// Token + position + segment embeddings followed by layer normalisation.
pub fn embeddings(g: &mut Graph, p: &BoundParams, batch: &Batch, eps: f64) -> Result<Var> {
    let shape = [batch.batch, batch.len];
    let tok = g.embedding(p.var("embeddings.token"), &batch.token_ids, &shape)?;
    let seg = g.embedding(p.var("embeddings.segment"), &batch.segment_ids, &shape)?;
    let positions: Vec<usize> = (0..batch.len).collect();
    let pos = g.embedding(p.var("embeddings.position"), &positions, &[batch.len])?;
    let x = g.add(&tok, &seg)?;
    let x = g.add(&x, &pos)?;
    layer_norm(g, p, "embeddings.ln", &x, eps)
}

pub(crate) fn init_encoder_block(init: &mut Init, prefix: &str, hidden: usize, ff: usize) {
    for part in ["q", "k", "v", "o"] {
        init.linear(&format!("{prefix}.attn.{part}"), hidden, hidden);
    }
    init.layer_norm(&format!("{prefix}.attn_ln"), hidden);
    init.linear(&format!("{prefix}.ff.in"), hidden, ff);
    init.linear(&format!("{prefix}.ff.out"), ff, hidden);
    init.layer_norm(&format!("{prefix}.ff_ln"), hidden);
}

/// Parameter count of one encoder block.
pub fn encoder_block_params(hidden: usize, ff: usize) -> usize {
    4 * (hidden * hidden + hidden) + 2 * hidden + (hidden * ff + ff) + (ff * hidden + hidden) + 2 * hidden
}

/// Output of one post-LN transformer encoder block.
pub struct BlockOutput {
    pub hidden: Var,
    /// Pre-softmax scores `[batch, heads, len, len]`.
    pub scores: Var,
}

#[allow(clippy::too_many_arguments)]
pub fn encoder_block(
    g: &mut Graph,
    p: &BoundParams,
    prefix: &str,
    x: &Var,
    key_mask: &[f64],
    heads: usize,
    eps: f64,
    dropout: &mut Dropout,
) -> Result<BlockOutput> {
    let q = linear(g, p, &format!("{prefix}.attn.q"), x)?;
    let k = linear(g, p, &format!("{prefix}.attn.k"), x)?;
    let v = linear(g, p, &format!("{prefix}.attn.v"), x)?;
    let scores = g.attention_scores(&q, &k, heads, Some(key_mask))?;
    let probs = g.softmax(&scores, 3)?;
    let ctx = g.attention_context(&probs, &v)?;
    let attn = linear(g, p, &format!("{prefix}.attn.o"), &ctx)?;
    let attn = dropout.apply(g, &attn)?;
    let h = g.add(x, &attn)?;
    let h = layer_norm(g, p, &format!("{prefix}.attn_ln"), &h, eps)?;
    let f = linear(g, p, &format!("{prefix}.ff.in"), &h)?;
    let f = g.gelu(&f);
    let f = linear(g, p, &format!("{prefix}.ff.out"), &f)?;
    let f = dropout.apply(g, &f)?;
    let out = g.add(&h, &f)?;
    let hidden = layer_norm(g, p, &format!("{prefix}.ff_ln"), &out, eps)?;
    Ok(BlockOutput { hidden, scores })
}

/// Linear span head producing masked `[batch, len]` start and end logits.
pub fn span_head(g: &mut Graph, p: &BoundParams, x: &Var, mask: &[f64]) -> Result<(Var, Var)> {
    let logits = linear(g, p, "head", x)?;
    let start = g.select_last(&logits, 0)?;
    let end = g.select_last(&logits, 1)?;
    let start = g.mask_fill(&start, mask, crate::tensor::MASK_VALUE)?;
    let end = g.mask_fill(&end, mask, crate::tensor::MASK_VALUE)?;
    Ok((start, end))
}
