//! Distillation losses, teacher/student alignment by pooling, and the
//! layer-by-layer activation schedule.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::{truncated_normal, ParamStore};
use crate::model::{ModelConfig, COMPRESSION};
use crate::teacher::{skip_map, TeacherConfig, TeacherSignals};
use crate::tensor::{kernels, Graph, Tensor, Var};

pub const PROJ_EMBED: &str = "proj.embed";
pub const PROJ_HIDDEN: &str = "proj.hidden";

/// Trainable projections from student to teacher widths: `W^E [e', e]` and
/// one `W^h [d', d]` shared by every block. Not part of inference
/// checkpoints.
pub fn projection_params(student: &ModelConfig, teacher: &TeacherConfig, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut store = ParamStore::new();
    for (name, fan_in, fan_out) in [
        (PROJ_EMBED, student.embedding_size, teacher.embedding_size),
        (PROJ_HIDDEN, student.hidden_size, teacher.hidden_size),
    ] {
        let std = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| truncated_normal(&mut rng, std)).collect();
        store.insert(name, Tensor::new(vec![fan_in, fan_out], data).expect("valid shape"));
    }
    store
}

/// Heaviside gate of block `j`: active once `tau >= (j + 1) * tau_star`.
pub fn chi(j: usize, tau: u64, tau_star: u64) -> bool {
    tau >= (j as u64 + 1) * tau_star
}

/// Which loss terms a training run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Ground-truth loss only.
    Baseline,
    /// Output distillation plus ground truth from the first step.
    SoftmaxDistil,
    /// Every term active from the first step.
    AllLayerDistil,
    /// Layer-by-layer activation.
    SlowBuild,
    /// Layer-by-layer activation with unlabeled augmentation pairs.
    SlowBuildAugmented,
}

impl TrainMode {
    pub const ALL: [TrainMode; 5] = [
        TrainMode::Baseline,
        TrainMode::SoftmaxDistil,
        TrainMode::AllLayerDistil,
        TrainMode::SlowBuild,
        TrainMode::SlowBuildAugmented,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Baseline => "baseline",
            TrainMode::SoftmaxDistil => "softmax_distil",
            TrainMode::AllLayerDistil => "all_layer_distil",
            TrainMode::SlowBuild => "slow_build",
            TrainMode::SlowBuildAugmented => "slow_build_augmented",
        }
    }

    pub fn is_slow_build(self) -> bool {
        matches!(self, TrainMode::SlowBuild | TrainMode::SlowBuildAugmented)
    }

    pub fn uses_teacher(self) -> bool {
        self != TrainMode::Baseline
    }

    pub fn uses_augmentation(self) -> bool {
        self == TrainMode::SlowBuildAugmented
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        TrainMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode {s:?}"))
    }
}

/// Loss weights and the per-block step budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSchedule {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub tau_star: u64,
}

impl Default for LossSchedule {
    fn default() -> Self {
        LossSchedule {
            alpha: 1.0,
            beta: 1.2,
            gamma: 1.4,
            delta: 1.0,
            epsilon: 1.0,
            tau_star: 57_500,
        }
    }
}

impl LossSchedule {
    /// First step of the final phase for an `n_blocks` student.
    pub fn build_up_steps(&self, n_blocks: usize) -> u64 {
        (n_blocks as u64 + 1) * self.tau_star
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.gamma, self.delta, self.epsilon];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        if self.tau_star == 0 {
            return Err(Error::Config("tau_star must be positive".into()));
        }
        Ok(())
    }
}

/// Loss terms switched on at one step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActiveTerms {
    pub embedding: bool,
    pub layers: Vec<bool>,
    pub distillation: bool,
    pub ground_truth: bool,
}

impl ActiveTerms {
    pub fn at(mode: TrainMode, schedule: &LossSchedule, tau: u64, n_blocks: usize) -> Self {
        match mode {
            TrainMode::Baseline => ActiveTerms {
                embedding: false,
                layers: vec![false; n_blocks],
                distillation: false,
                ground_truth: true,
            },
            TrainMode::SoftmaxDistil => ActiveTerms {
                embedding: false,
                layers: vec![false; n_blocks],
                distillation: true,
                ground_truth: true,
            },
            TrainMode::AllLayerDistil => ActiveTerms {
                embedding: true,
                layers: vec![true; n_blocks],
                distillation: true,
                ground_truth: true,
            },
            TrainMode::SlowBuild | TrainMode::SlowBuildAugmented => {
                let last = chi(n_blocks, tau, schedule.tau_star);
                ActiveTerms {
                    embedding: true,
                    layers: (0..n_blocks).map(|j| chi(j, tau, schedule.tau_star)).collect(),
                    distillation: last,
                    ground_truth: last,
                }
            }
        }
    }

    pub fn active_layers(&self) -> usize {
        self.layers.iter().filter(|&&a| a).count()
    }

    /// Whether any teacher-derived term is on.
    pub fn needs_teacher(&self) -> bool {
        self.embedding || self.distillation || self.layers.iter().any(|&a| a)
    }
}

// ---- teacher-side alignment --------------------------------------------------

/// Mean over the valid positions of each length-4 window of `x [B, l, ch]`.
/// Windows without a valid position are zero.
pub fn masked_avgpool(x: &[f64], batch: usize, len: usize, ch: usize, mask: &[f64]) -> Result<Vec<f64>> {
    check_len(len)?;
    if x.len() != batch * len * ch || mask.len() != batch * len {
        return Err(Error::dim(format!(
            "pooling {} values / {} mask entries as [{batch}, {len}, {ch}]",
            x.len(),
            mask.len()
        )));
    }
    let out_len = len / COMPRESSION;
    let mut out = vec![0.0; batch * out_len * ch];
    for b in 0..batch {
        for p in 0..out_len {
            let dst = &mut out[(b * out_len + p) * ch..(b * out_len + p + 1) * ch];
            let mut n = 0.0;
            for t in p * COMPRESSION..(p + 1) * COMPRESSION {
                if mask[b * len + t] == 0.0 {
                    continue;
                }
                n += 1.0;
                let src = &x[(b * len + t) * ch..(b * len + t + 1) * ch];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
            if n > 0.0 {
                dst.iter_mut().for_each(|d| *d /= n);
            }
        }
    }
    Ok(out)
}

/// Max over the valid (query, key) pairs of each 4x4 window of
/// `x [B, heads, l, l]`. Returns the pooled values (zero in empty windows)
/// and the per-example cell indicator `[B, l/4, l/4]`.
pub fn masked_maxpool2d(
    x: &[f64],
    batch: usize,
    heads: usize,
    len: usize,
    mask: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(len)?;
    if x.len() != batch * heads * len * len || mask.len() != batch * len {
        return Err(Error::dim(format!(
            "pooling {} scores / {} mask entries as [{batch}, {heads}, {len}, {len}]",
            x.len(),
            mask.len()
        )));
    }
    let m = len / COMPRESSION;
    let mut out = vec![0.0; batch * heads * m * m];
    let mut cells = vec![0.0; batch * m * m];
    for b in 0..batch {
        let valid = |t: usize| mask[b * len + t] != 0.0;
        for a in 0..m {
            for c in 0..m {
                let any = (0..COMPRESSION).any(|i| valid(a * COMPRESSION + i))
                    && (0..COMPRESSION).any(|i| valid(c * COMPRESSION + i));
                if !any {
                    continue;
                }
                cells[(b * m + a) * m + c] = 1.0;
                for h in 0..heads {
                    let base = (b * heads + h) * len * len;
                    let mut best = f64::NEG_INFINITY;
                    for qi in 0..COMPRESSION {
                        let q = a * COMPRESSION + qi;
                        if !valid(q) {
                            continue;
                        }
                        for ki in 0..COMPRESSION {
                            let k = c * COMPRESSION + ki;
                            if valid(k) {
                                best = best.max(x[base + q * len + k]);
                            }
                        }
                    }
                    out[((b * heads + h) * m + a) * m + c] = best;
                }
            }
        }
    }
    Ok((out, cells))
}

fn check_len(len: usize) -> Result<()> {
    if len % COMPRESSION != 0 {
        return Err(Error::Length(format!(
            "teacher length {len} not divisible by {COMPRESSION}"
        )));
    }
    Ok(())
}

/// Teacher signals reduced to what the losses read, for the student blocks
/// only: embeddings, pooled hidden states and scores of the mapped layers,
/// and logits. Cheap to cache per example.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherTargets {
    pub batch: usize,
    pub len: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    /// `[B, l, e]`
    pub embeddings: Vec<f64>,
    /// Per student block `[B, l/4, d]`.
    pub hidden: Vec<Vec<f64>>,
    /// Per student block `[B, heads, l/4, l/4]`.
    pub attention: Vec<Vec<f64>>,
    /// `[B, l/4, l/4]`, 1 where a pooled attention cell is counted.
    pub attention_cells: Vec<f64>,
    pub start_logits: Vec<f64>,
    pub end_logits: Vec<f64>,
}

impl TeacherTargets {
    pub fn from_signals(signals: &TeacherSignals, mask: &[f64], student_blocks: usize) -> Result<Self> {
        let es = signals.embeddings.shape();
        if es.len() != 3 {
            return Err(Error::dim(format!("teacher embeddings of shape {es:?}")));
        }
        let (batch, len, embed_dim) = (es[0], es[1], es[2]);
        let n_layers = signals.hidden_states.len();
        let mut hidden = Vec::with_capacity(student_blocks);
        let mut attention = Vec::with_capacity(student_blocks);
        let mut cells = Vec::new();
        let mut hidden_dim = 0;
        let mut heads = 0;
        for j in 0..student_blocks {
            let t = skip_map(j, student_blocks, n_layers)?;
            let h = &signals.hidden_states[t];
            hidden_dim = h.shape()[2];
            hidden.push(masked_avgpool(h.data(), batch, len, hidden_dim, mask)?);
            let s = &signals.attention_scores[t];
            heads = s.shape()[1];
            let (pooled, c) = masked_maxpool2d(s.data(), batch, heads, len, mask)?;
            attention.push(pooled);
            cells = c;
        }
        Ok(TeacherTargets {
            batch,
            len,
            embed_dim,
            hidden_dim,
            heads,
            embeddings: signals.embeddings.data().to_vec(),
            hidden,
            attention,
            attention_cells: cells,
            start_logits: signals.start_logits.data().to_vec(),
            end_logits: signals.end_logits.data().to_vec(),
        })
    }

    /// Concatenates along the batch axis.
    pub fn stack<'a>(parts: impl IntoIterator<Item = &'a TeacherTargets>) -> Result<Self> {
        let mut it = parts.into_iter();
        let first = it.next().ok_or_else(|| Error::Contract("stacking zero targets".into()))?;
        let mut out = first.clone();
        for p in it {
            if (p.len, p.embed_dim, p.hidden_dim, p.heads, p.hidden.len())
                != (out.len, out.embed_dim, out.hidden_dim, out.heads, out.hidden.len())
            {
                return Err(Error::dim("stacking teacher targets of different shapes"));
            }
            out.batch += p.batch;
            out.embeddings.extend_from_slice(&p.embeddings);
            for (a, b) in out.hidden.iter_mut().zip(&p.hidden) {
                a.extend_from_slice(b);
            }
            for (a, b) in out.attention.iter_mut().zip(&p.attention) {
                a.extend_from_slice(b);
            }
            out.attention_cells.extend_from_slice(&p.attention_cells);
            out.start_logits.extend_from_slice(&p.start_logits);
            out.end_logits.extend_from_slice(&p.end_logits);
        }
        Ok(out)
    }
}

// ---- losses -----------------------------------------------------------------

/// Per-element weights giving "mean over the valid rows and channels of each
/// example, then mean over the batch".
fn row_mean_weights(mask: &[f64], batch: usize, rows: usize, ch: usize) -> Vec<f64> {
    let mut w = vec![0.0; batch * rows * ch];
    for b in 0..batch {
        let m = &mask[b * rows..(b + 1) * rows];
        let n = m.iter().filter(|&&v| v != 0.0).count();
        if n == 0 {
            continue;
        }
        let wi = 1.0 / (batch * n * ch) as f64;
        for (r, &v) in m.iter().enumerate() {
            if v != 0.0 {
                w[(b * rows + r) * ch..(b * rows + r + 1) * ch].fill(wi);
            }
        }
    }
    w
}

fn expect_shape(what: &str, got: &[usize], want: &[usize]) -> Result<()> {
    if got != want {
        return Err(Error::dim(format!("{what}: expected {want:?}, got {got:?}")));
    }
    Ok(())
}

/// Embedding loss: MSE between teacher embeddings and projected student
/// embeddings over valid positions.
pub fn embedding_loss(g: &mut Graph, teacher: &[f64], student: &Var, w_e: &Var, mask: &[f64]) -> Result<Var> {
    let proj = g.matmul(student, w_e)?;
    let s = proj.shape().to_vec();
    if s.len() != 3 || mask.len() != s[0] * s[1] || teacher.len() != proj.numel() {
        return Err(Error::dim(format!(
            "embedding loss: projected student {s:?}, {} teacher values, {} mask entries",
            teacher.len(),
            mask.len()
        )));
    }
    let w = row_mean_weights(mask, s[0], s[1], s[2]);
    g.weighted_sq_err(&proj, teacher, &w)
}

/// Hidden-state loss against pooled teacher states `[B, l/4, d]`.
pub fn hidden_loss_pooled(
    g: &mut Graph,
    pooled_teacher: &[f64],
    student: &Var,
    w_h: &Var,
    compressed_mask: &[f64],
) -> Result<Var> {
    let proj = g.matmul(student, w_h)?;
    let s = proj.shape().to_vec();
    if s.len() != 3 || compressed_mask.len() != s[0] * s[1] || pooled_teacher.len() != proj.numel() {
        return Err(Error::dim(format!(
            "hidden loss: projected student {s:?}, {} pooled teacher values, {} mask entries",
            pooled_teacher.len(),
            compressed_mask.len()
        )));
    }
    let w = row_mean_weights(compressed_mask, s[0], s[1], s[2]);
    g.weighted_sq_err(&proj, pooled_teacher, &w)
}

/// Hidden-state loss from full-length teacher states `[B, l, d]`.
pub fn hidden_loss(g: &mut Graph, teacher: &Tensor, student: &Var, w_h: &Var, mask: &[f64]) -> Result<Var> {
    let ts = teacher.shape();
    if ts.len() != 3 {
        return Err(Error::dim(format!("teacher hidden state of shape {ts:?}")));
    }
    let pooled = masked_avgpool(teacher.data(), ts[0], ts[1], ts[2], mask)?;
    let cmask = crate::model::compress_mask(mask, ts[0], ts[1])?;
    hidden_loss_pooled(g, &pooled, student, w_h, &cmask)
}

/// Attention-score loss against pooled teacher scores.
pub fn attention_loss_pooled(g: &mut Graph, pooled_teacher: &[f64], cells: &[f64], student: &Var) -> Result<Var> {
    let s = student.shape().to_vec();
    if s.len() != 4 || s[2] != s[3] {
        return Err(Error::dim(format!("student attention scores of shape {s:?}")));
    }
    let (batch, heads, m) = (s[0], s[1], s[2]);
    if pooled_teacher.len() != student.numel() {
        if pooled_teacher.len() % (batch * m * m) == 0 {
            return Err(Error::Config(format!(
                "teacher has {} heads, student {heads}",
                pooled_teacher.len() / (batch * m * m)
            )));
        }
        return Err(Error::dim(format!(
            "{} pooled teacher scores for student scores {s:?}",
            pooled_teacher.len()
        )));
    }
    expect_shape("attention cells", &[cells.len()], &[batch * m * m])?;
    let mut w = vec![0.0; student.numel()];
    for b in 0..batch {
        let c = &cells[b * m * m..(b + 1) * m * m];
        let n = c.iter().filter(|&&v| v != 0.0).count();
        if n == 0 {
            continue;
        }
        let wi = 1.0 / (batch * heads * n) as f64;
        for h in 0..heads {
            let base = (b * heads + h) * m * m;
            for (i, &v) in c.iter().enumerate() {
                if v != 0.0 {
                    w[base + i] = wi;
                }
            }
        }
    }
    g.weighted_sq_err(student, pooled_teacher, &w)
}

/// Attention-score loss from full-resolution teacher scores `[B, h, l, l]`.
pub fn attention_loss(g: &mut Graph, teacher: &Tensor, student: &Var, mask: &[f64]) -> Result<Var> {
    let ts = teacher.shape();
    if ts.len() != 4 {
        return Err(Error::dim(format!("teacher attention scores of shape {ts:?}")));
    }
    if student.shape().len() == 4 && student.shape()[1] != ts[1] {
        return Err(Error::Config(format!(
            "teacher has {} heads, student {}",
            ts[1],
            student.shape()[1]
        )));
    }
    let (pooled, cells) = masked_maxpool2d(teacher.data(), ts[0], ts[1], ts[2], mask)?;
    attention_loss_pooled(g, &pooled, &cells, student)
}

/// Soft-target cross-entropy at temperature `T`, scaled by `T^2`, averaged
/// over the start and end distributions and the batch.
pub fn softmax_distillation_loss(
    g: &mut Graph,
    teacher_start: &[f64],
    teacher_end: &[f64],
    student_start: &Var,
    student_end: &Var,
    temperature: f64,
) -> Result<Var> {
    if !(temperature >= 1.0) {
        return Err(Error::Config(format!("temperature {temperature} below 1")));
    }
    let s = student_start.shape().to_vec();
    if s.len() != 2 || student_end.shape() != s.as_slice() {
        return Err(Error::dim(format!(
            "student logits {s:?} / {:?}",
            student_end.shape()
        )));
    }
    let (batch, len) = (s[0], s[1]);
    let mut total: Option<Var> = None;
    for (t, z) in [(teacher_start, student_start), (teacher_end, student_end)] {
        expect_shape("teacher logits", &[t.len()], &[batch * len])?;
        let scaled: Vec<f64> = t.iter().map(|v| v / temperature).collect();
        let p = kernels::softmax_axis(&scaled, batch, len, 1);
        let zs = g.scale(z, 1.0 / temperature);
        let ls = g.log_softmax(&zs, 1)?;
        let c = -temperature * temperature / (2.0 * batch as f64);
        let w: Vec<f64> = p.iter().map(|pi| c * pi).collect();
        let part = g.weighted_sum(&ls, &w)?;
        total = Some(match total {
            None => part,
            Some(acc) => g.add(&acc, &part)?,
        });
    }
    Ok(total.expect("two parts"))
}

/// Cross-entropy at the target start/end positions, averaged over labeled
/// examples; zero when none is labeled.
pub fn ground_truth_loss(
    g: &mut Graph,
    student_start: &Var,
    student_end: &Var,
    targets: &[(usize, usize)],
    has_label: &[bool],
    mask: &[f64],
) -> Result<Var> {
    let s = student_start.shape().to_vec();
    if s.len() != 2 || student_end.shape() != s.as_slice() {
        return Err(Error::dim(format!("student logits {s:?}")));
    }
    let (batch, len) = (s[0], s[1]);
    if targets.len() != batch || has_label.len() != batch || mask.len() != batch * len {
        return Err(Error::dim(format!(
            "{} targets, {} label flags, {} mask entries for batch {batch}x{len}",
            targets.len(),
            has_label.len(),
            mask.len()
        )));
    }
    let n = has_label.iter().filter(|&&h| h).count();
    if n == 0 {
        return g.constant_from(&[], vec![0.0]);
    }
    let mut ws = vec![0.0; batch * len];
    let mut we = vec![0.0; batch * len];
    let c = -1.0 / (2.0 * n as f64);
    for b in 0..batch {
        if !has_label[b] {
            continue;
        }
        let (ts, te) = targets[b];
        for t in [ts, te] {
            if t >= len || mask[b * len + t] == 0.0 {
                return Err(Error::Data(format!(
                    "target position {t} of example {b} is outside the valid region"
                )));
            }
        }
        ws[b * len + ts] = c;
        we[b * len + te] = c;
    }
    let ls = g.log_softmax(student_start, 1)?;
    let le = g.log_softmax(student_end, 1)?;
    let a = g.weighted_sum(&ls, &ws)?;
    let b = g.weighted_sum(&le, &we)?;
    g.add(&a, &b)
}

/// Per-part values of one loss evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    #[serde(rename = "L_e")]
    pub l_e: Option<f64>,
    #[serde(rename = "L_h")]
    pub l_h: Vec<f64>,
    #[serde(rename = "L_a")]
    pub l_a: Vec<f64>,
    #[serde(rename = "L_d")]
    pub l_d: Option<f64>,
    #[serde(rename = "L_g")]
    pub l_g: f64,
    pub total: f64,
    pub active_layers: usize,
}

impl LossReport {
    /// Recombines the parts with the given weights and activation.
    pub fn recombine(&self, s: &LossSchedule, active: &ActiveTerms) -> f64 {
        let mut t = 0.0;
        if active.embedding {
            t += s.alpha * self.l_e.unwrap_or(0.0);
        }
        for (j, &on) in active.layers.iter().enumerate() {
            if on {
                t += s.beta * self.l_h.get(j).copied().unwrap_or(0.0)
                    + s.gamma * self.l_a.get(j).copied().unwrap_or(0.0);
            }
        }
        if active.distillation {
            t += s.delta * self.l_d.unwrap_or(0.0);
        }
        if active.ground_truth {
            t += s.epsilon * self.l_g;
        }
        t
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.l_g.is_finite()
            && self.l_e.map_or(true, f64::is_finite)
            && self.l_d.map_or(true, f64::is_finite)
            && self.l_h.iter().chain(&self.l_a).all(|v| v.is_finite())
    }
}

/// Graph handles of every computed loss part.
pub struct LossParts {
    pub l_e: Option<Var>,
    pub l_h: Vec<Var>,
    pub l_a: Vec<Var>,
    pub l_d: Option<Var>,
    pub l_g: Var,
}

/// Weighted sum of the active parts. Inactive parts stay out of the result,
/// so nothing is back-propagated through them.
pub fn total_loss(g: &mut Graph, parts: &LossParts, s: &LossSchedule, active: &ActiveTerms) -> Result<(Var, LossReport)> {
    let mut terms: Vec<Var> = Vec::new();
    if active.embedding {
        if let Some(v) = &parts.l_e {
            terms.push(g.scale(v, s.alpha));
        }
    }
    for (j, &on) in active.layers.iter().enumerate() {
        if !on {
            continue;
        }
        if let Some(v) = parts.l_h.get(j) {
            terms.push(g.scale(v, s.beta));
        }
        if let Some(v) = parts.l_a.get(j) {
            terms.push(g.scale(v, s.gamma));
        }
    }
    if active.distillation {
        if let Some(v) = &parts.l_d {
            terms.push(g.scale(v, s.delta));
        }
    }
    if active.ground_truth {
        terms.push(g.scale(&parts.l_g, s.epsilon));
    }
    let mut total = g.constant_from(&[], vec![0.0])?;
    for t in &terms {
        total = g.add(&total, t)?;
    }
    let report = LossReport {
        l_e: parts.l_e.as_ref().map(Var::item),
        l_h: parts.l_h.iter().map(Var::item).collect(),
        l_a: parts.l_a.iter().map(Var::item).collect(),
        l_d: parts.l_d.as_ref().map(Var::item),
        l_g: parts.l_g.item(),
        total: total.item(),
        active_layers: active.active_layers(),
    };
    Ok((total, report))
}

/// One metrics line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossLogLine {
    pub step: u64,
    #[serde(flatten)]
    pub report: LossReport,
    pub lr: f64,
    #[serde(rename = "T")]
    pub temperature: f64,
}

impl LossLogLine {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log line serialises")
    }
}

/// Ground-truth side of a batch.
pub struct Labels<'a> {
    pub spans: &'a [(usize, usize)],
    pub has_label: &'a [bool],
}

/// Every loss part for one student forward pass. Teacher-derived parts are
/// computed only when `targets` is given.
pub fn loss_parts(
    g: &mut Graph,
    record: &crate::model::StudentForwardRecord,
    projections: &crate::model::params::BoundParams,
    targets: Option<&TeacherTargets>,
    labels: &Labels,
    mask: &[f64],
    temperature: f64,
) -> Result<LossParts> {
    let l_g = ground_truth_loss(g, &record.start_logits, &record.end_logits, labels.spans, labels.has_label, mask)?;
    let Some(t) = targets else {
        return Ok(LossParts {
            l_e: None,
            l_h: Vec::new(),
            l_a: Vec::new(),
            l_d: None,
            l_g,
        });
    };
    let n = record.hidden_states.len();
    if t.hidden.len() != n {
        return Err(Error::Config(format!(
            "teacher targets cover {} blocks, student has {n}",
            t.hidden.len()
        )));
    }
    let cmask = record.compressed_mask.data();
    let l_e = embedding_loss(g, &t.embeddings, &record.embeddings, projections.var(PROJ_EMBED), mask)?;
    let mut l_h = Vec::with_capacity(n);
    let mut l_a = Vec::with_capacity(n);
    for j in 0..n {
        l_h.push(hidden_loss_pooled(
            g,
            &t.hidden[j],
            &record.hidden_states[j],
            projections.var(PROJ_HIDDEN),
            cmask,
        )?);
        l_a.push(attention_loss_pooled(g, &t.attention[j], &t.attention_cells, &record.attention_scores[j])?);
    }
    let l_d = softmax_distillation_loss(
        g,
        &t.start_logits,
        &t.end_logits,
        &record.start_logits,
        &record.end_logits,
        temperature,
    )?;
    Ok(LossParts {
        l_e: Some(l_e),
        l_h,
        l_a,
        l_d: Some(l_d),
        l_g,
    })
}
