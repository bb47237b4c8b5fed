use serde::{Deserialize, Serialize};

use crate::distill::{LossSchedule, TrainMode};
use crate::error::{Error, Result};
use crate::kv::impl_kv_fields;

/// Distillation hyperparameters. Every field is addressable from
/// `key=value` config text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub init_lr: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub adam_epsilon: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub grad_clip: f64,
    pub init_temperature: f64,
    pub final_temperature: f64,
    pub epochs: usize,
    /// Overrides `epochs` when positive.
    pub total_steps: u64,
    pub tau_star: u64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// 0 disables periodic checkpoints; phase boundaries are still saved.
    pub checkpoint_every: u64,
    pub max_answer_len: usize,
    pub null_threshold: f64,
    /// Unlabeled pairs per labeled example in augmented mode.
    pub augment_ratio: f64,
}

impl_kv_fields!(TrainConfig {
    mode,
    init_lr,
    batch_size,
    dropout,
    adam_epsilon,
    adam_beta1,
    adam_beta2,
    weight_decay,
    warmup_steps,
    grad_clip,
    init_temperature,
    final_temperature,
    epochs,
    total_steps,
    tau_star,
    alpha,
    beta,
    gamma,
    delta,
    epsilon,
    seed,
    checkpoint_every,
    max_answer_len,
    null_threshold,
    augment_ratio,
});

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

impl TrainConfig {
    /// Full-scale values: lr 2e-4, batch 24, 35 epochs, tau* = 57,500.
    pub fn full_size() -> Self {
        TrainConfig {
            batch_size: 24,
            epochs: 35,
            tau_star: 57_500,
            total_steps: 0,
            ..TrainConfig::desk()
        }
    }

    /// Workstation preset: batch 8, tau* = 500.
    pub fn desk() -> Self {
        let w = LossSchedule::default();
        TrainConfig {
            mode: TrainMode::SlowBuild,
            init_lr: 2e-4,
            batch_size: 8,
            dropout: 0.0,
            adam_epsilon: 1e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            weight_decay: 0.0,
            warmup_steps: 0,
            grad_clip: 0.0,
            init_temperature: 5.0,
            final_temperature: 1.0,
            epochs: 10,
            total_steps: 0,
            tau_star: 500,
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            delta: w.delta,
            epsilon: w.epsilon,
            seed: 0,
            checkpoint_every: 0,
            max_answer_len: 30,
            null_threshold: 0.0,
            augment_ratio: crate::corpus::DEFAULT_AUGMENT_RATIO,
        }
    }

    pub fn loss_schedule(&self) -> LossSchedule {
        LossSchedule {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            delta: self.delta,
            epsilon: self.epsilon,
            tau_star: self.tau_star,
        }
    }

    pub fn steps_per_epoch(&self, n_examples: usize) -> u64 {
        n_examples.div_ceil(self.batch_size.max(1)) as u64
    }

    /// Planned number of optimizer steps over `n_examples`.
    pub fn planned_steps(&self, n_examples: usize) -> u64 {
        if self.total_steps > 0 {
            self.total_steps
        } else {
            self.epochs as u64 * self.steps_per_epoch(n_examples)
        }
    }

    /// Learning-rate and temperature schedule for an `n_blocks` student.
    pub fn schedule(&self, n_blocks: usize, total_steps: u64) -> Schedule {
        let build_up = if self.mode.is_slow_build() {
            self.loss_schedule().build_up_steps(n_blocks)
        } else {
            0
        };
        Schedule {
            init_lr: self.init_lr,
            init_temperature: self.init_temperature,
            final_temperature: self.final_temperature,
            warmup_steps: self.warmup_steps,
            build_up,
            total: total_steps,
        }
    }

    pub fn validate(&self, n_blocks: usize, total_steps: u64) -> Result<()> {
        self.loss_schedule().validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.init_lr > 0.0 && self.init_lr.is_finite()) {
            return Err(Error::Config("init_lr must be positive".into()));
        }
        if !(self.final_temperature >= 1.0 && self.init_temperature >= self.final_temperature) {
            return Err(Error::Config(
                "temperatures must satisfy init_temperature >= final_temperature >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_epsilon > 0.0) {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        if self.weight_decay < 0.0 || self.grad_clip < 0.0 || self.augment_ratio < 0.0 {
            return Err(Error::Config("weight_decay, grad_clip and augment_ratio must be nonnegative".into()));
        }
        if total_steps == 0 {
            return Err(Error::Config("training would run zero steps".into()));
        }
        let build = self.schedule(n_blocks, total_steps).build_up;
        if self.mode.is_slow_build() && total_steps <= build {
            return Err(Error::Config(format!(
                "{total_steps} steps do not exceed the {build}-step build-up phase"
            )));
        }
        Ok(())
    }
}

/// Learning rate and temperature as functions of the global step.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub init_lr: f64,
    pub init_temperature: f64,
    pub final_temperature: f64,
    pub warmup_steps: u64,
    /// Steps with constant lr and temperature.
    pub build_up: u64,
    pub total: u64,
}

impl Schedule {
    /// Fraction of the decay phase still ahead at `tau`: 1 during build-up,
    /// 0 at the final step.
    fn remaining(&self, tau: u64) -> f64 {
        if tau <= self.build_up || self.total <= self.build_up {
            1.0
        } else {
            (self.total.saturating_sub(tau)) as f64 / (self.total - self.build_up) as f64
        }
    }

    pub fn lr_at(&self, tau: u64) -> Result<f64> {
        if tau > self.total {
            return Err(Error::Contract(format!("step {tau} beyond the final step {}", self.total)));
        }
        let warm = if self.warmup_steps > 0 {
            ((tau + 1) as f64 / self.warmup_steps as f64).min(1.0)
        } else {
            1.0
        };
        Ok(self.init_lr * warm * self.remaining(tau))
    }

    pub fn temperature_at(&self, tau: u64) -> f64 {
        let r = self.remaining(tau.min(self.total));
        self.final_temperature + (self.init_temperature - self.final_temperature) * r
    }
}
