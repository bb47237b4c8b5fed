//! Uncompressed control: the student's embedding, expansion, encoder stack
//! and head with every convolution, pool and upsample removed, so the
//! encoder blocks run at the full input length.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batch::Batch;
use super::config::{ModelConfig, N_SEGMENTS};
use super::layers::{self, Dropout};
use super::params::{Init, ParamStore};
use super::student::StudentModel;
use crate::error::Result;
use crate::tensor::{Graph, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ControlModel {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: ParamStore,
}

impl ControlModel {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            store: ParamStore::new(),
            rng: &mut rng,
        };
        layers::init_embeddings(&mut init, c.vocab_size, c.max_seq_len, N_SEGMENTS, c.embedding_size);
        init.linear("expand", c.embedding_size, c.hidden_size);
        init.layer_norm("expand_ln", c.hidden_size);
        for j in 0..c.n_encoder_blocks {
            layers::init_encoder_block(&mut init, &format!("blocks.{j}"), c.hidden_size, c.ff_size);
        }
        init.linear("head", c.hidden_size, 2);
        let params = init.store;
        Ok(ControlModel { config, seed, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    /// Start and end logits `[B, l]`.
    pub fn forward(&self, g: &mut Graph, batch: &Batch) -> Result<(Var, Var)> {
        let c = &self.config;
        StudentModel::check_batch(c, batch)?;
        let p = self.params.bind(g);
        let eps = c.layer_norm_eps;
        let x = layers::embeddings(g, &p, batch, eps)?;
        let x = layers::linear(g, &p, "expand", &x)?;
        let mut h = layers::layer_norm(g, &p, "expand_ln", &x, eps)?;
        let mut dropout = Dropout::none();
        for j in 0..c.n_encoder_blocks {
            let out = layers::encoder_block(
                g,
                &p,
                &format!("blocks.{j}"),
                &h,
                &batch.attention_mask,
                c.n_heads,
                eps,
                &mut dropout,
            )?;
            h = out.hidden;
        }
        layers::span_head(g, &p, &h, &batch.attention_mask)
    }
}
