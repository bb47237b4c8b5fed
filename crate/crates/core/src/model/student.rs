//! The compressed student: convolutional down-sampling, an encoder stack at
//! a quarter of the input length, and convolutional up-sampling back to the
//! token resolution.
//!
//! ```text
//! embed (e') -> conv1 + maxpool2 -> conv2 + maxpool2 -> expand to d' + LN
//!   -> N encoder blocks at l/4
//!   -> upsample2 -> LN(conv3 + skip(conv2 out))
//!   -> upsample2 -> LN(conv4 + skip(conv1 out))
//!   -> LN(x + conv5 x) -> LN(x + conv6 x) -> span head
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batch::{compress_mask, Batch};
use super::config::{ModelConfig, COMPRESSION, N_SEGMENTS};
use super::layers::{self, Dropout};
use super::params::{BoundParams, Init, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct StudentModel {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: ParamStore,
}

/// Everything the distillation losses read from one student forward pass.
pub struct StudentForwardRecord {
    /// `[B, l, e']`
    pub embeddings: Var,
    /// One `[B, l/4, d']` tensor per encoder block.
    pub hidden_states: Vec<Var>,
    /// One pre-softmax `[B, heads, l/4, l/4]` tensor per encoder block.
    pub attention_scores: Vec<Var>,
    /// `[B, l]`, masked positions hold [`MASK_VALUE`](crate::tensor::MASK_VALUE).
    pub start_logits: Var,
    pub end_logits: Var,
    /// `[B, l/4]`
    pub compressed_mask: Tensor,
}

fn skip_needed(from: usize, to: usize) -> bool {
    from != to
}

impl StudentModel {
    /// Deterministically initialised student.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            store: ParamStore::new(),
            rng: &mut rng,
        };
        layers::init_embeddings(&mut init, c.vocab_size, c.max_seq_len, N_SEGMENTS, c.embedding_size);
        let k = c.kernel_width;
        init.conv("conv1", k, c.embedding_size, c.conv1_filters);
        init.conv("conv2", k, c.conv1_filters, c.conv2_filters);
        init.linear("expand", c.conv2_filters, c.hidden_size);
        init.layer_norm("expand_ln", c.hidden_size);
        for j in 0..c.n_encoder_blocks {
            layers::init_encoder_block(&mut init, &format!("blocks.{j}"), c.hidden_size, c.ff_size);
        }
        let f = c.conv3to6_filters;
        init.conv("conv3", k, c.hidden_size, f);
        if skip_needed(c.conv2_filters, f) {
            init.linear("skip2", c.conv2_filters, f);
        }
        init.layer_norm("conv3_ln", f);
        init.conv("conv4", k, f, f);
        if skip_needed(c.conv1_filters, f) {
            init.linear("skip1", c.conv1_filters, f);
        }
        init.layer_norm("conv4_ln", f);
        init.conv("conv5", k, f, f);
        init.layer_norm("conv5_ln", f);
        init.conv("conv6", k, f, f);
        init.layer_norm("conv6_ln", f);
        init.linear("head", f, 2);
        let params = init.store;
        Ok(StudentModel {
            config,
            seed,
            params,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    pub(crate) fn check_batch(config: &ModelConfig, batch: &Batch) -> Result<()> {
        batch.validate()?;
        if batch.len % COMPRESSION != 0 || batch.len < COMPRESSION {
            return Err(Error::Length(format!(
                "sequence length {} must be a positive multiple of {COMPRESSION}",
                batch.len
            )));
        }
        if batch.len > config.max_seq_len {
            return Err(Error::dim(format!(
                "sequence length {} exceeds max_seq_len {}",
                batch.len, config.max_seq_len
            )));
        }
        if let Some(&bad) = batch.token_ids.iter().find(|&&t| t >= config.vocab_size) {
            return Err(Error::Data(format!(
                "token id {bad} outside vocabulary of {}",
                config.vocab_size
            )));
        }
        if batch.segment_ids.iter().any(|&s| s >= N_SEGMENTS) {
            return Err(Error::Data("segment id must be 0 or 1".into()));
        }
        Ok(())
    }

    /// Forward pass with freshly bound parameters.
    pub fn forward(&self, g: &mut Graph, batch: &Batch) -> Result<StudentForwardRecord> {
        let p = self.params.bind(g);
        self.forward_with(g, &p, batch, &mut Dropout::none())
    }

    /// Forward pass using parameters already registered on `g`.
    pub fn forward_with(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        batch: &Batch,
        dropout: &mut Dropout,
    ) -> Result<StudentForwardRecord> {
        let c = &self.config;
        Self::check_batch(c, batch)?;
        let eps = c.layer_norm_eps;
        let cmask = compress_mask(&batch.attention_mask, batch.batch, batch.len)?;

        let emb = layers::embeddings(g, p, batch, eps)?;
        let x = dropout.apply(g, &emb)?;

        let c1 = layers::conv(g, p, "conv1", &x)?;
        let c1 = g.gelu(&c1);
        let x = g.maxpool1d(&c1, 2, 2)?;
        let c2 = layers::conv(g, p, "conv2", &x)?;
        let c2 = g.gelu(&c2);
        let x = g.maxpool1d(&c2, 2, 2)?;

        let x = layers::linear(g, p, "expand", &x)?;
        let mut h = layers::layer_norm(g, p, "expand_ln", &x, eps)?;

        let mut hidden_states = Vec::with_capacity(c.n_encoder_blocks);
        let mut attention_scores = Vec::with_capacity(c.n_encoder_blocks);
        for j in 0..c.n_encoder_blocks {
            let out = layers::encoder_block(g, p, &format!("blocks.{j}"), &h, &cmask, c.n_heads, eps, dropout)?;
            h = out.hidden.clone();
            hidden_states.push(out.hidden);
            attention_scores.push(out.scores);
        }

        let u = g.upsample1d(&h, 2)?;
        let y = layers::conv(g, p, "conv3", &u)?;
        let y = g.gelu(&y);
        let s = if skip_needed(c.conv2_filters, c.conv3to6_filters) {
            layers::linear(g, p, "skip2", &c2)?
        } else {
            c2
        };
        let y = g.add(&y, &s)?;
        let y = layers::layer_norm(g, p, "conv3_ln", &y, eps)?;

        let u = g.upsample1d(&y, 2)?;
        let y = layers::conv(g, p, "conv4", &u)?;
        let y = g.gelu(&y);
        let s = if skip_needed(c.conv1_filters, c.conv3to6_filters) {
            layers::linear(g, p, "skip1", &c1)?
        } else {
            c1
        };
        let y = g.add(&y, &s)?;
        let mut y = layers::layer_norm(g, p, "conv4_ln", &y, eps)?;

        for name in ["conv5", "conv6"] {
            let r = layers::conv(g, p, name, &y)?;
            let r = g.gelu(&r);
            let r = g.add(&y, &r)?;
            y = layers::layer_norm(g, p, &format!("{name}_ln"), &r, eps)?;
        }

        let (start_logits, end_logits) = layers::span_head(g, p, &y, &batch.attention_mask)?;
        Ok(StudentForwardRecord {
            embeddings: emb,
            hidden_states,
            attention_scores,
            start_logits,
            end_logits,
            compressed_mask: Tensor::new(vec![batch.batch, batch.len / COMPRESSION], cmask)?,
        })
    }
}
