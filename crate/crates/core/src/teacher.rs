//! Full-resolution BERT-style teacher and the student-block to
//! teacher-layer mapping.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::QAExample;
use crate::error::{Error, Result};
use crate::kv::impl_kv_fields;
use crate::model::checkpoint::{self, Manifest};
use crate::model::layers::{self, Dropout};
use crate::model::params::{BoundParams, Init, ParamStore};
use crate::model::{Batch, ModelConfig, N_SEGMENTS};
use crate::tensor::{Graph, Tensor, Var};

/// Teacher layers per student encoder block.
pub const LAYER_RATIO: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub n_layers: usize,
    pub hidden_size: usize,
    /// Equal to `hidden_size` for a standard teacher; otherwise a projection
    /// maps embeddings to the hidden width.
    pub embedding_size: usize,
    pub n_heads: usize,
    pub ff_size: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub layer_norm_eps: f64,
}

impl_kv_fields!(TeacherConfig {
    n_layers,
    hidden_size,
    embedding_size,
    n_heads,
    ff_size,
    vocab_size,
    max_seq_len,
    layer_norm_eps,
});

impl TeacherConfig {
    /// Workstation teacher: 12 layers, d=96, 4 heads.
    pub fn desk(vocab_size: usize, max_seq_len: usize) -> Self {
        TeacherConfig {
            n_layers: 12,
            hidden_size: 96,
            embedding_size: 96,
            n_heads: 4,
            ff_size: 384,
            vocab_size,
            max_seq_len,
            layer_norm_eps: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_layers", self.n_layers),
            ("hidden_size", self.hidden_size),
            ("embedding_size", self.embedding_size),
            ("n_heads", self.n_heads),
            ("ff_size", self.ff_size),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("teacher {name} must be positive")));
            }
        }
        if self.hidden_size % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "teacher hidden_size {} not divisible by n_heads {}",
                self.hidden_size, self.n_heads
            )));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::Config("teacher layer_norm_eps must be positive".into()));
        }
        Ok(())
    }

    /// Checks that this teacher can distil into `student`.
    pub fn check_student(&self, student: &ModelConfig) -> Result<()> {
        if self.n_layers != LAYER_RATIO * student.n_encoder_blocks {
            return Err(Error::Config(format!(
                "teacher has {} layers; a {}-block student needs {}",
                self.n_layers,
                student.n_encoder_blocks,
                LAYER_RATIO * student.n_encoder_blocks
            )));
        }
        if self.vocab_size != student.vocab_size {
            return Err(Error::Config(format!(
                "teacher vocabulary {} differs from student vocabulary {}",
                self.vocab_size, student.vocab_size
            )));
        }
        if self.n_heads != student.n_heads {
            return Err(Error::Config(format!(
                "teacher has {} heads, student {}",
                self.n_heads, student.n_heads
            )));
        }
        if self.max_seq_len < student.max_seq_len {
            return Err(Error::Config(format!(
                "teacher max_seq_len {} shorter than student {}",
                self.max_seq_len, student.max_seq_len
            )));
        }
        Ok(())
    }
}

/// Teacher layer distilled into student block `j`: `3j + 2`.
pub fn skip_map(j: usize, student_blocks: usize, teacher_layers: usize) -> Result<usize> {
    if teacher_layers != LAYER_RATIO * student_blocks {
        return Err(Error::Config(format!(
            "{teacher_layers} teacher layers cannot map onto {student_blocks} student blocks"
        )));
    }
    if j >= student_blocks {
        return Err(Error::Config(format!("student block {j} of {student_blocks}")));
    }
    Ok(LAYER_RATIO * j + 2)
}

/// Detached teacher outputs for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherSignals {
    /// `[B, l, e]`
    pub embeddings: Tensor,
    /// `L_t` tensors `[B, l, d]`.
    pub hidden_states: Vec<Tensor>,
    /// `L_t` pre-softmax tensors `[B, heads, l, l]`, masked keys at the
    /// masking value.
    pub attention_scores: Vec<Tensor>,
    pub start_logits: Tensor,
    pub end_logits: Tensor,
}

/// Graph-level teacher outputs, used when training the teacher.
pub struct TeacherRecord {
    pub embeddings: Var,
    pub hidden_states: Vec<Var>,
    pub attention_scores: Vec<Var>,
    pub start_logits: Var,
    pub end_logits: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherModel {
    pub config: TeacherConfig,
    pub seed: u64,
    pub params: ParamStore,
}

impl TeacherModel {
    pub fn build(config: TeacherConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            store: ParamStore::new(),
            rng: &mut rng,
        };
        layers::init_embeddings(&mut init, c.vocab_size, c.max_seq_len, N_SEGMENTS, c.embedding_size);
        if c.embedding_size != c.hidden_size {
            init.linear("embed_proj", c.embedding_size, c.hidden_size);
        }
        for j in 0..c.n_layers {
            layers::init_encoder_block(&mut init, &format!("layers.{j}"), c.hidden_size, c.ff_size);
        }
        init.linear("head", c.hidden_size, 2);
        let params = init.store;
        Ok(TeacherModel { config, seed, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        batch.validate()?;
        let c = &self.config;
        if batch.len > c.max_seq_len {
            return Err(Error::dim(format!(
                "sequence length {} exceeds teacher max_seq_len {}",
                batch.len, c.max_seq_len
            )));
        }
        if let Some(&bad) = batch.token_ids.iter().find(|&&t| t >= c.vocab_size) {
            return Err(Error::Config(format!(
                "token id {bad} outside the teacher vocabulary of {}",
                c.vocab_size
            )));
        }
        if batch.segment_ids.iter().any(|&s| s >= N_SEGMENTS) {
            return Err(Error::Data("segment id must be 0 or 1".into()));
        }
        Ok(())
    }

    pub fn forward_with(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        batch: &Batch,
        dropout: &mut Dropout,
    ) -> Result<TeacherRecord> {
        self.check_batch(batch)?;
        let c = &self.config;
        let eps = c.layer_norm_eps;
        let emb = layers::embeddings(g, p, batch, eps)?;
        let x = dropout.apply(g, &emb)?;
        let mut h = if c.embedding_size != c.hidden_size {
            layers::linear(g, p, "embed_proj", &x)?
        } else {
            x
        };
        let mut hidden_states = Vec::with_capacity(c.n_layers);
        let mut attention_scores = Vec::with_capacity(c.n_layers);
        for j in 0..c.n_layers {
            let out = layers::encoder_block(
                g,
                p,
                &format!("layers.{j}"),
                &h,
                &batch.attention_mask,
                c.n_heads,
                eps,
                dropout,
            )?;
            h = out.hidden.clone();
            hidden_states.push(out.hidden);
            attention_scores.push(out.scores);
        }
        let (start_logits, end_logits) = layers::span_head(g, p, &h, &batch.attention_mask)?;
        Ok(TeacherRecord {
            embeddings: emb,
            hidden_states,
            attention_scores,
            start_logits,
            end_logits,
        })
    }

    /// Frozen forward pass; nothing is recorded for differentiation.
    pub fn teacher_forward(&self, batch: &Batch) -> Result<TeacherSignals> {
        let mut g = Graph::no_grad();
        let p = self.params.bind(&mut g);
        let r = self.forward_with(&mut g, &p, batch, &mut Dropout::none())?;
        Ok(TeacherSignals {
            embeddings: r.embeddings.to_tensor(),
            hidden_states: r.hidden_states.iter().map(Var::to_tensor).collect(),
            attention_scores: r.attention_scores.iter().map(Var::to_tensor).collect(),
            start_logits: r.start_logits.to_tensor(),
            end_logits: r.end_logits.to_tensor(),
        })
    }

    /// Start and end logits only.
    pub fn logits(&self, batch: &Batch) -> Result<(Tensor, Tensor)> {
        let s = self.teacher_forward(batch)?;
        Ok((s.start_logits, s.end_logits))
    }

    pub fn manifest(&self, step: u64) -> Manifest {
        let mut m = Manifest::new();
        m.set("kind", "teacher");
        m.set_fields(&self.config);
        m.set("seed", self.seed);
        m.set("step", step);
        m
    }

    pub fn save(&self, dir: &Path, step: u64) -> Result<()> {
        checkpoint::save_checkpoint(dir, &self.manifest(step), &self.params)
    }

    pub fn load(dir: &Path) -> Result<(Self, u64)> {
        let m = Manifest::load(dir)?;
        checkpoint::check_kind(&m, "teacher")?;
        let mut config = TeacherConfig::desk(1, 4);
        m.read_fields(&mut config)?;
        let seed = m.require("seed")?;
        let step = m.require("step")?;
        let mut model = TeacherModel::build(config, seed)?;
        checkpoint::load_params(dir, &mut model.params)?;
        Ok((model, step))
    }
}

/// Strips labels from question/context pairs so they enter training as
/// augmentation data: the teacher supplies their soft targets and the
/// ground-truth loss is withheld.
pub fn augment_with_teacher(teacher: &TeacherModel, pairs: &[QAExample]) -> Result<Vec<QAExample>> {
    pairs
        .iter()
        .map(|e| {
            teacher.check_batch(&e.batch())?;
            Ok(e.unlabeled())
        })
        .collect()
}
