use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::adam::{clip_global_norm, Adam};
use super::batches::{batch_indices, step_seed};
use crate::corpus::{batch_of, QAExample};
use crate::distill::ground_truth_loss;
use crate::error::{Error, Result};
use crate::kv::impl_kv_fields;
use crate::model::layers::Dropout;
use crate::teacher::TeacherModel;
use crate::tensor::Graph;

/// Supervised fine-tuning of the teacher on labeled examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Overrides `epochs` when positive.
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub dropout: f64,
    pub adam_epsilon: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub grad_clip: f64,
    /// Data order and dropout.
    pub seed: u64,
    /// Weight initialisation.
    #[serde(default)]
    pub init_seed: u64,
}

impl_kv_fields!(TeacherTrainConfig {
    lr,
    batch_size,
    epochs,
    total_steps,
    warmup_steps,
    dropout,
    adam_epsilon,
    adam_beta1,
    adam_beta2,
    grad_clip,
    seed,
    init_seed,
});

impl Default for TeacherTrainConfig {
    fn default() -> Self {
        TeacherTrainConfig {
            lr: 1e-3,
            batch_size: 16,
            epochs: 6,
            total_steps: 0,
            warmup_steps: 100,
            dropout: 0.0,
            adam_epsilon: 1e-6,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            grad_clip: 1.0,
            seed: 0,
            init_seed: 0,
        }
    }
}

impl TeacherTrainConfig {
    pub fn planned_steps(&self, n_examples: usize) -> u64 {
        if self.total_steps > 0 {
            self.total_steps
        } else {
            self.epochs as u64 * n_examples.div_ceil(self.batch_size.max(1)) as u64
        }
    }

    /// Linear warmup then linear decay to 0.
    pub fn lr_at(&self, tau: u64, total: u64) -> f64 {
        let warm = if self.warmup_steps > 0 {
            ((tau + 1) as f64 / self.warmup_steps as f64).min(1.0)
        } else {
            1.0
        };
        let decay = total.saturating_sub(tau) as f64 / total.max(1) as f64;
        self.lr * warm * decay
    }
}

/// Trains `teacher` in place; `on_step` receives each step's loss. Returns
/// the loss curve.
pub fn train_teacher(
    teacher: &mut TeacherModel,
    data: &[QAExample],
    config: &TeacherTrainConfig,
    mut on_step: impl FnMut(u64, f64),
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Data("teacher training set is empty".into()));
    }
    if config.batch_size == 0 || !(config.lr > 0.0) {
        return Err(Error::Config("teacher batch_size and lr must be positive".into()));
    }
    let total = config.planned_steps(data.len());
    let mut adam = Adam::new(config.adam_beta1, config.adam_beta2, config.adam_epsilon, 0.0);
    let mut losses = Vec::with_capacity(total as usize);
    for tau in 0..total {
        let idx = batch_indices(config.seed, tau, data.len(), config.batch_size);
        let examples: Vec<&QAExample> = idx.iter().map(|&i| &data[i]).collect();
        let batch = batch_of(examples.iter().copied())?;
        let spans: Vec<(usize, usize)> = examples.iter().map(|e| e.target()).collect();
        let has_label: Vec<bool> = examples.iter().map(|e| e.has_label).collect();

        let mut grads = BTreeMap::new();
        let loss = {
            let mut g = Graph::new();
            let p = teacher.params.bind(&mut g);
            let mut dropout = Dropout::new(config.dropout, step_seed(config.seed, tau));
            let r = teacher.forward_with(&mut g, &p, &batch, &mut dropout)?;
            let l = ground_truth_loss(&mut g, &r.start_logits, &r.end_logits, &spans, &has_label, &batch.attention_mask)?;
            if !l.item().is_finite() {
                return Err(Error::Divergence {
                    step: tau,
                    detail: format!("teacher loss {}", l.item()),
                });
            }
            let gr = g.backward(&l)?;
            for (name, var) in p.vars() {
                if let Some(v) = gr.get(var) {
                    grads.insert(name.to_string(), v.to_vec());
                }
            }
            l.item()
        };
        if config.grad_clip > 0.0 {
            clip_global_norm(&mut grads, config.grad_clip);
        }
        adam.step(&mut teacher.params, &grads, config.lr_at(tau, total));
        losses.push(loss);
        on_step(tau, loss);
    }
    Ok(losses)
}
