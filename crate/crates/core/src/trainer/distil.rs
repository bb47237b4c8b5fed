use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::adam::{clip_global_norm, Adam, Moments};
use super::batches::{batch_indices, step_seed};
use super::config::{Schedule, TrainConfig};
use crate::corpus::{batch_of, QAExample};
use crate::distill::{
    loss_parts, projection_params, total_loss, ActiveTerms, Labels, LossLogLine, LossReport, LossSchedule,
    TeacherTargets,
};
use crate::error::{Error, Result};
use crate::model::checkpoint::{self, Manifest};
use crate::model::layers::Dropout;
use crate::model::{ParamStore, StudentModel};
use crate::teacher::TeacherModel;
use crate::tensor::{Graph, Tensor};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const DIVERGENCE_FILE: &str = "divergence.json";
/// Final student weights, under both the run directory and each checkpoint.
pub const STUDENT_DIR: &str = "student";
/// Latest resumable state under the run directory.
pub const CHECKPOINT_DIR: &str = "checkpoint";
const STATE_DIR: &str = "state";

/// Where and how far a run goes.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Receives `metrics.jsonl`, `checkpoints/` and the final `student/`.
    pub out_dir: Option<PathBuf>,
    /// Stop (and checkpoint) once this global step is reached.
    pub stop_after: Option<u64>,
}

/// Distillation state: student, projections, optimizer and step counter.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub student: StudentModel,
    pub projections: ParamStore,
    pub adam: Adam,
    pub step: u64,
    pub total_steps: u64,
    pub history: Vec<LossLogLine>,
    /// Keep per-example teacher targets between epochs.
    pub cache_teacher: bool,
    teacher: Option<&'a TeacherModel>,
    data: &'a [QAExample],
    cache: Vec<Option<Arc<TeacherTargets>>>,
}

fn check_data(data: &[QAExample]) -> Result<()> {
    let Some(first) = data.first() else {
        return Err(Error::Data("training set is empty".into()));
    };
    if let Some(bad) = data.iter().find(|e| e.len() != first.len()) {
        return Err(Error::Data(format!(
            "{}: length {} differs from {}",
            bad.id,
            bad.len(),
            first.len()
        )));
    }
    Ok(())
}

impl<'a> Trainer<'a> {
    pub fn new(
        student: StudentModel,
        teacher: Option<&'a TeacherModel>,
        data: &'a [QAExample],
        config: TrainConfig,
    ) -> Result<Self> {
        check_data(data)?;
        let total_steps = config.planned_steps(data.len());
        config.validate(student.config.n_encoder_blocks, total_steps)?;
        let projections = match teacher {
            Some(t) => {
                t.config.check_student(&student.config)?;
                projection_params(&student.config, &t.config, config.seed)
            }
            None if config.mode.uses_teacher() => {
                return Err(Error::Config(format!("mode {} needs a teacher", config.mode)));
            }
            None => ParamStore::new(),
        };
        let adam = Adam::new(config.adam_beta1, config.adam_beta2, config.adam_epsilon, config.weight_decay);
        Ok(Trainer {
            student,
            projections,
            adam,
            step: 0,
            total_steps,
            history: Vec::new(),
            cache_teacher: true,
            teacher,
            cache: vec![None; data.len()],
            data,
            config,
        })
    }

    pub fn schedule(&self) -> Schedule {
        self.config.schedule(self.student.config.n_encoder_blocks, self.total_steps)
    }

    pub fn loss_schedule(&self) -> LossSchedule {
        self.config.loss_schedule()
    }

    pub fn active_terms(&self, tau: u64) -> ActiveTerms {
        ActiveTerms::at(
            self.config.mode,
            &self.loss_schedule(),
            tau,
            self.student.config.n_encoder_blocks,
        )
    }

    fn targets(&mut self, idx: &[usize]) -> Result<Option<TeacherTargets>> {
        let Some(teacher) = self.teacher.filter(|_| self.config.mode.uses_teacher()) else {
            return Ok(None);
        };
        let n = self.student.config.n_encoder_blocks;
        let mut parts = Vec::with_capacity(idx.len());
        for &i in idx {
            let t = match &self.cache[i] {
                Some(t) => Arc::clone(t),
                None => {
                    let b = self.data[i].batch();
                    let signals = teacher.teacher_forward(&b)?;
                    let t = Arc::new(TeacherTargets::from_signals(&signals, &b.attention_mask, n)?);
                    if self.cache_teacher {
                        self.cache[i] = Some(Arc::clone(&t));
                    }
                    t
                }
            };
            parts.push(t);
        }
        TeacherTargets::stack(parts.iter().map(|t| t.as_ref())).map(Some)
    }

    /// Loss report and gradients (by parameter name, student and
    /// projections together) at step `tau`, without updating anything.
    pub fn loss_and_grads(&mut self, tau: u64) -> Result<(LossReport, f64, BTreeMap<String, Vec<f64>>)> {
        let temperature = self.schedule().temperature_at(tau);
        let idx = batch_indices(self.config.seed, tau, self.data.len(), self.config.batch_size);
        let targets = self.targets(&idx)?;
        let examples: Vec<&QAExample> = idx.iter().map(|&i| &self.data[i]).collect();
        let batch = batch_of(examples.iter().copied())?;
        let spans: Vec<(usize, usize)> = examples.iter().map(|e| e.target()).collect();
        let has_label: Vec<bool> = examples.iter().map(|e| e.has_label).collect();
        let active = self.active_terms(tau);

        let mut g = Graph::new();
        let sp = self.student.params.bind(&mut g);
        let pp = self.projections.bind(&mut g);
        let mut dropout = Dropout::new(self.config.dropout, step_seed(self.config.seed, tau));
        let record = self.student.forward_with(&mut g, &sp, &batch, &mut dropout)?;
        let labels = Labels {
            spans: &spans,
            has_label: &has_label,
        };
        let parts = loss_parts(&mut g, &record, &pp, targets.as_ref(), &labels, &batch.attention_mask, temperature)?;
        let (total, report) = total_loss(&mut g, &parts, &self.loss_schedule(), &active)?;
        if !report.is_finite() {
            return Err(Error::Divergence {
                step: tau,
                detail: serde_json::to_string(&report).unwrap_or_default(),
            });
        }
        let grads = g.backward(&total)?;
        let mut out = BTreeMap::new();
        for (name, var) in sp.vars().chain(pp.vars()) {
            if let Some(gr) = grads.get(var) {
                out.insert(name.to_string(), gr.to_vec());
            }
        }
        Ok((report, temperature, out))
    }

    /// One optimizer step.
    pub fn train_step(&mut self) -> Result<LossLogLine> {
        let tau = self.step;
        let lr = self.schedule().lr_at(tau)?;
        let (report, temperature, mut grads) = self.loss_and_grads(tau)?;
        if grads.values().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: tau,
                detail: format!("non-finite gradient; losses {}", serde_json::to_string(&report).unwrap_or_default()),
            });
        }
        if self.config.grad_clip > 0.0 {
            clip_global_norm(&mut grads, self.config.grad_clip);
        }
        self.adam.step(&mut self.student.params, &grads, lr);
        self.adam.step(&mut self.projections, &grads, lr);
        self.step += 1;
        let line = LossLogLine {
            step: tau,
            report,
            lr,
            temperature,
        };
        self.history.push(line.clone());
        Ok(line)
    }

    fn is_phase_boundary(&self, step: u64) -> bool {
        self.config.mode.is_slow_build()
            && step % self.config.tau_star == 0
            && step / self.config.tau_star <= self.student.config.n_encoder_blocks as u64 + 1
            && step > 0
    }

    /// Trains until the planned total or `opts.stop_after`, logging every
    /// step and checkpointing on schedule.
    pub fn run(&mut self, opts: &RunOptions) -> Result<()> {
        self.run_with(opts, |_| {})
    }

    /// [`run`](Self::run), calling `on_step` with every logged line.
    pub fn run_with(&mut self, opts: &RunOptions, mut on_step: impl FnMut(&LossLogLine)) -> Result<()> {
        let end = opts.stop_after.map_or(self.total_steps, |s| s.min(self.total_steps));
        let mut log = match &opts.out_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join(METRICS_FILE);
                let file = OpenOptions::new()
                    .create(true)
                    .append(self.step > 0)
                    .write(true)
                    .truncate(self.step == 0)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                Some((BufWriter::new(file), path))
            }
            None => None,
        };
        while self.step < end {
            let line = match self.train_step() {
                Ok(l) => l,
                Err(e) => {
                    if let (Error::Divergence { detail, step }, Some(dir)) = (&e, &opts.out_dir) {
                        let dump = format!("{{\"step\":{step},\"detail\":{}}}\n", serde_json::to_string(detail).unwrap_or_default());
                        let _ = fs::write(dir.join(DIVERGENCE_FILE), dump);
                    }
                    return Err(e);
                }
            };
            if let Some((w, path)) = &mut log {
                writeln!(w, "{}", line.to_json()).map_err(|e| Error::io(path.as_path(), e))?;
            }
            on_step(&line);
            let s = self.step;
            let periodic = self.config.checkpoint_every > 0 && s % self.config.checkpoint_every == 0;
            if let Some(dir) = &opts.out_dir {
                if (periodic || self.is_phase_boundary(s)) && s < self.total_steps {
                    if let Some((w, path)) = &mut log {
                        w.flush().map_err(|e| Error::io(path.as_path(), e))?;
                    }
                    self.save(&dir.join("checkpoints").join(format!("step-{s:08}")))?;
                }
            }
        }
        if let Some((w, path)) = &mut log {
            w.flush().map_err(|e| Error::io(path.as_path(), e))?;
        }
        if let Some(dir) = &opts.out_dir {
            self.save(&dir.join(CHECKPOINT_DIR))?;
            if self.step >= self.total_steps {
                self.student.save(&dir.join(STUDENT_DIR), self.step)?;
            }
        }
        Ok(())
    }

    /// Writes everything needed to continue training bit-identically.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let tmp = dir.with_extension("partial");
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        self.student.save(&tmp.join(STUDENT_DIR), self.step)?;
        let mut m = Manifest::new();
        m.set("kind", "train_state");
        m.set("step", self.step);
        m.set("total_steps", self.total_steps);
        m.set("n_examples", self.data.len());
        m.set_fields(&self.config);
        let mut store = self.projections.clone();
        for (name, st) in &self.adam.state {
            m.set(&format!("adam_t.{name}"), st.t);
            store.insert(format!("adam_m.{name}"), Tensor::new(vec![st.m.len()], st.m.clone())?);
            store.insert(format!("adam_v.{name}"), Tensor::new(vec![st.v.len()], st.v.clone())?);
        }
        checkpoint::save_checkpoint(&tmp.join(STATE_DIR), &m, &store)?;
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
    }

    /// Restores a trainer saved with [`save`](Self::save). `data` and
    /// `teacher` must be the ones the run started with.
    pub fn resume(dir: &Path, teacher: Option<&'a TeacherModel>, data: &'a [QAExample]) -> Result<Self> {
        let state_dir = dir.join(STATE_DIR);
        let m = Manifest::load(&state_dir)?;
        checkpoint::check_kind(&m, "train_state")?;
        let mut config = TrainConfig::desk();
        m.read_fields(&mut config)?;
        let n: usize = m.require("n_examples")?;
        if n != data.len() {
            return Err(Error::Config(format!(
                "checkpoint was trained on {n} examples, {} given",
                data.len()
            )));
        }
        let (student, _) = StudentModel::load(&dir.join(STUDENT_DIR))?;
        let mut t = Trainer::new(student, teacher, data, config)?;
        t.step = m.require("step")?;
        t.total_steps = m.require("total_steps")?;

        let mut store = t.projections.clone();
        let mut counts = Vec::new();
        for (key, value) in m.entries() {
            if let Some(name) = key.strip_prefix("adam_t.") {
                let size = t
                    .student
                    .params
                    .get(name)
                    .or_else(|| t.projections.get(name))
                    .map(Tensor::numel)
                    .ok_or_else(|| Error::Data(format!("optimizer state for unknown parameter {name}")))?;
                let count: u64 = value
                    .parse()
                    .map_err(|_| Error::Data(format!("bad {key} value {value:?}")))?;
                store.insert(format!("adam_m.{name}"), Tensor::zeros(&[size]));
                store.insert(format!("adam_v.{name}"), Tensor::zeros(&[size]));
                counts.push((name.to_string(), count));
            }
        }
        checkpoint::load_params(&state_dir, &mut store)?;
        for (name, count) in counts {
            let take = |k: String| store.get(&k).map(|t| t.data().to_vec()).unwrap_or_default();
            t.adam.state.insert(
                name.clone(),
                Moments {
                    m: take(format!("adam_m.{name}")),
                    v: take(format!("adam_v.{name}")),
                    t: count,
                },
            );
        }
        for (name, value) in t.projections.iter_mut() {
            *value = store.get(name).cloned().expect("projection present");
        }
        Ok(t)
    }
}

/// Reads a metrics file back.
pub fn read_metrics(path: &Path) -> Result<Vec<LossLogLine>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                msg: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

