use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::distil::Trainer;
use super::eval::{evaluate_student, DecodeOptions};
use crate::corpus::{mix_augmented, QAExample};
use crate::distill::TrainMode;
use crate::error::Result;
use crate::model::{ModelConfig, StudentModel};
use crate::teacher::{augment_with_teacher, TeacherModel};

pub struct AblationInputs<'a> {
    pub student_config: ModelConfig,
    pub student_seed: u64,
    pub teacher: &'a TeacherModel,
    pub train: &'a [QAExample],
    /// Question/context pairs used only by the augmented mode.
    pub unlabeled: &'a [QAExample],
    pub dev: &'a [QAExample],
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: TrainMode,
    pub em: f64,
    pub f1: f64,
    pub steps: u64,
}

/// Trains one student per mode in the order of [`TrainMode::ALL`] and
/// scores each on the dev set. Every mode runs the same number of steps,
/// planned from the labeled set.
pub fn run_ablation(inputs: &AblationInputs, mut progress: impl FnMut(&AblationRow)) -> Result<Vec<AblationRow>> {
    let steps = inputs.config.planned_steps(inputs.train.len());
    let mut rows = Vec::new();
    for mode in TrainMode::ALL {
        let row = run_mode(inputs, mode, steps)?;
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// Trains and scores one mode.
pub fn run_mode(inputs: &AblationInputs, mode: TrainMode, steps: u64) -> Result<AblationRow> {
    let config = TrainConfig {
        mode,
        total_steps: steps,
        ..inputs.config.clone()
    };
    let data = mode_training_set(mode, inputs.teacher, inputs.train, inputs.unlabeled, &config)?;
    let student = StudentModel::build(inputs.student_config.clone(), inputs.student_seed)?;
    let teacher = mode.uses_teacher().then_some(inputs.teacher);
    let mut trainer = Trainer::new(student, teacher, &data, config.clone())?;
    trainer.run(&Default::default())?;
    let opts = DecodeOptions {
        max_answer_len: config.max_answer_len,
        null_threshold: config.null_threshold,
        ..DecodeOptions::default()
    };
    let s = evaluate_student(&trainer.student, inputs.dev, &opts)?;
    Ok(AblationRow {
        mode,
        em: s.em,
        f1: s.f1,
        steps,
    })
}

/// Training examples for `mode`: the labeled set, plus teacher-relabeled
/// pairs from `unlabeled` for the augmented mode.
pub fn mode_training_set(
    mode: TrainMode,
    teacher: &TeacherModel,
    labeled: &[QAExample],
    unlabeled: &[QAExample],
    config: &TrainConfig,
) -> Result<Vec<QAExample>> {
    if !mode.uses_augmentation() {
        return Ok(labeled.to_vec());
    }
    let pairs = augment_with_teacher(teacher, unlabeled)?;
    Ok(mix_augmented(labeled, &pairs, config.augment_ratio, config.seed))
}
