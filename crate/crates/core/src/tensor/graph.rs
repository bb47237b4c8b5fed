use std::sync::Arc;

use rand::Rng;

use super::kernels::{self, Element};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value produced on a [`Graph`].
///
/// A `Var` owns its value; it carries a node id only when it was recorded for
/// differentiation. Dropping every handle to an unrecorded value frees it.
#[derive(Clone, Debug)]
pub struct Var {
    id: Option<usize>,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Var {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Whether gradients flow into this value.
    pub fn requires_grad(&self) -> bool {
        self.id.is_some()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.shape.clone(), self.data.as_ref().clone())
            .expect("var invariants hold")
    }
}

/// Split `[.., len, ch]` into `(outer, len, ch)`.
fn seq_dims(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::dim(format!(
            "{what} expects a [.., length, channels] tensor, got {shape:?}"
        )));
    }
    let n = shape.len();
    Ok((shape[..n - 2].iter().product(), shape[n - 2], shape[n - 1]))
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    Sum { a: Var },
    Gelu { a: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Softmax { x: Var, y: Arc<Vec<f64>>, dims: (usize, usize, usize) },
    LogSoftmax { x: Var, y: Arc<Vec<f64>>, dims: (usize, usize, usize) },
    Dropout { x: Var, mask: Vec<f64> },
    Embedding { table: Var, ids: Vec<usize> },
    Conv1d { x: Var, w: Var, b: Var, cols: Vec<f64>, dims: (usize, usize, usize, usize) },
    MaxPool { x: Var, argmax: Vec<usize> },
    AvgPool1d { x: Var, dims: (usize, usize, usize), size: usize, stride: usize },
    Upsample1d { x: Var, dims: (usize, usize, usize), factor: usize },
    AttnScores { q: Var, k: Var, heads: usize, key_mask: Option<Vec<f64>>, dims: (usize, usize, usize, usize) },
    AttnContext { p: Var, v: Var, heads: usize, dims: (usize, usize, usize, usize) },
    MaskFill { x: Var, mask: Vec<f64> },
    SelectLast { x: Var, index: usize, ch: usize },
    Reshape { x: Var },
    WeightedSum { x: Var, w: Vec<f64> },
    WeightedSqErr { x: Var, target: Vec<f64>, w: Vec<f64> },
}

impl Op {
    fn inputs(&self) -> Vec<&Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul { a, b, .. } | Add { a, b } | Sub { a, b } | Mul { a, b } => vec![a, b],
            Scale { a, .. } | Sum { a } | Gelu { a } => vec![a],
            LayerNorm { x, gain, bias, .. } => vec![x, gain, bias],
            Softmax { x, .. } | LogSoftmax { x, .. } | Dropout { x, .. } => vec![x],
            Embedding { table, .. } => vec![table],
            Conv1d { x, w, b, .. } => vec![x, w, b],
            MaxPool { x, .. } | AvgPool1d { x, .. } | Upsample1d { x, .. } => vec![x],
            AttnScores { q, k, .. } => vec![q, k],
            AttnContext { p, v, .. } => vec![p, v],
            MaskFill { x, .. } | SelectLast { x, .. } | Reshape { x } => vec![x],
            WeightedSum { x, .. } | WeightedSqErr { x, .. } => vec![x],
        }
    }
}

/// Gradients produced by [`Graph::backward`], indexed by recorded node.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if any flowed into it.
    pub fn get(&self, var: &Var) -> Option<&[f64]> {
        var.id
            .and_then(|id| self.grads.get(id))
            .and_then(|g| g.as_deref())
    }

    /// Like [`get`](Self::get) but materialises zeros when nothing flowed.
    pub fn get_or_zeros(&self, var: &Var) -> Vec<f64> {
        self.get(var)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; var.numel()])
    }
}

/// Computation tape. Operations are recorded only while recording is enabled
/// and at least one operand requires a gradient.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Op>,
    recording: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A recording graph.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A graph that never records; every result is a constant.
    pub fn no_grad() -> Self {
        Graph {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable leaf.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let data = Arc::new(t.data().to_vec());
        if self.recording {
            self.nodes.push(Op::Leaf);
            Var {
                id: Some(self.nodes.len() - 1),
                shape: t.shape().to_vec(),
                data,
            }
        } else {
            Var {
                id: None,
                shape: t.shape().to_vec(),
                data,
            }
        }
    }

    /// Registers a value that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        Var {
            id: None,
            shape,
            data: Arc::new(t.into_data()),
        }
    }

    pub fn constant_from(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), data)?;
        Ok(self.constant(t))
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: impl FnOnce(&Arc<Vec<f64>>) -> Op) -> Var {
        let data = Arc::new(data);
        let op = op(&data);
        let track = self.recording && op.inputs().iter().any(|v| v.requires_grad());
        let id = if track {
            self.nodes.push(op);
            Some(self.nodes.len() - 1)
        } else {
            None
        };
        Var { id, shape, data }
    }

    /// `a [.., m, k] x b [k, n] -> [.., m, n]`.
    pub fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        if a.shape.len() < 2 || b.shape.len() != 2 || a.shape[a.shape.len() - 1] != b.shape[0] {
            return Err(Error::dim(format!(
                "matmul of {:?} by {:?}",
                a.shape, b.shape
            )));
        }
        let k = b.shape[0];
        let n = b.shape[1];
        let m = a.numel() / k;
        let data = kernels::matmul(&a.data, &b.data, m, k, n);
        let mut shape = a.shape.clone();
        *shape.last_mut().unwrap() = n;
        Ok(self.push(shape, data, |_| Op::MatMul {
            a: a.clone(),
            b: b.clone(),
            m,
            k,
            n,
        }))
    }

    /// Elementwise sum; `b` may broadcast when its shape is a suffix of `a`'s.
    pub fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let suffix = b.shape.len() <= a.shape.len()
            && a.shape[a.shape.len() - b.shape.len()..] == b.shape[..];
        if !suffix {
            return Err(Error::dim(format!("add of {:?} and {:?}", a.shape, b.shape)));
        }
        let nb = b.numel();
        let data = a
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b.data[i % nb])
            .collect();
        Ok(self.push(a.shape.clone(), data, |_| Op::Add {
            a: a.clone(),
            b: b.clone(),
        }))
    }

    pub fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        if a.shape != b.shape {
            return Err(Error::dim(format!("sub of {:?} and {:?}", a.shape, b.shape)));
        }
        let data = a.data.iter().zip(b.data.iter()).map(|(x, y)| x - y).collect();
        Ok(self.push(a.shape.clone(), data, |_| Op::Sub {
            a: a.clone(),
            b: b.clone(),
        }))
    }

    pub fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        if a.shape != b.shape {
            return Err(Error::dim(format!("mul of {:?} and {:?}", a.shape, b.shape)));
        }
        let data = a.data.iter().zip(b.data.iter()).map(|(x, y)| x * y).collect();
        Ok(self.push(a.shape.clone(), data, |_| Op::Mul {
            a: a.clone(),
            b: b.clone(),
        }))
    }

    pub fn scale(&mut self, a: &Var, c: f64) -> Var {
        let data = a.data.iter().map(|v| v * c).collect();
        self.push(a.shape.clone(), data, |_| Op::Scale { a: a.clone(), c })
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, a: &Var) -> Var {
        let s = a.data.iter().fold(0.0, |acc, v| acc + v);
        self.push(Vec::new(), vec![s], |_| Op::Sum { a: a.clone() })
    }

    pub fn gelu(&mut self, a: &Var) -> Var {
        let data = a.data.iter().map(|&v| kernels::gelu(v)).collect();
        self.push(a.shape.clone(), data, |_| Op::Gelu { a: a.clone() })
    }

    /// Normalises the last axis, then applies learned gain and bias.
    pub fn layer_norm(&mut self, x: &Var, gain: &Var, bias: &Var, eps: f64) -> Result<Var> {
        let cols = *x.shape.last().ok_or_else(|| Error::dim("layer_norm on a scalar"))?;
        if gain.shape != [cols] || bias.shape != [cols] {
            return Err(Error::dim(format!(
                "layer_norm over {:?} with gain {:?} and bias {:?}",
                x.shape, gain.shape, bias.shape
            )));
        }
        let (y, xhat, rstd) = kernels::layer_norm(&x.data, &gain.data, &bias.data, cols, eps);
        Ok(self.push(x.shape.clone(), y, |_| Op::LayerNorm {
            x: x.clone(),
            gain: gain.clone(),
            bias: bias.clone(),
            xhat,
            rstd,
        }))
    }

    fn axis_dims(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= shape.len() {
            return Err(Error::dim(format!("axis {axis} invalid for shape {shape:?}")));
        }
        Ok((
            shape[..axis].iter().product(),
            shape[axis],
            shape[axis + 1..].iter().product(),
        ))
    }

    pub fn softmax(&mut self, x: &Var, axis: usize) -> Result<Var> {
        let dims = Self::axis_dims(&x.shape, axis)?;
        let y = kernels::softmax_axis(&x.data, dims.0, dims.1, dims.2);
        Ok(self.push(x.shape.clone(), y, |out| Op::Softmax {
            x: x.clone(),
            y: out.clone(),
            dims,
        }))
    }

    pub fn log_softmax(&mut self, x: &Var, axis: usize) -> Result<Var> {
        let dims = Self::axis_dims(&x.shape, axis)?;
        let y = kernels::log_softmax_axis(&x.data, dims.0, dims.1, dims.2);
        Ok(self.push(x.shape.clone(), y, |out| Op::LogSoftmax {
            x: x.clone(),
            y: out.clone(),
            dims,
        }))
    }

    /// Inverted dropout; the identity when `p == 0`.
    pub fn dropout<R: Rng>(&mut self, x: &Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..x.numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = x.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
        Ok(self.push(x.shape.clone(), data, |_| Op::Dropout { x: x.clone(), mask }))
    }

    /// Row lookup: `ids` shaped `out_shape`, table `[vocab, dim]`.
    pub fn embedding(&mut self, table: &Var, ids: &[usize], out_shape: &[usize]) -> Result<Var> {
        if table.shape.len() != 2 {
            return Err(Error::dim(format!("embedding table shape {:?}", table.shape)));
        }
        let (vocab, dim) = (table.shape[0], table.shape[1]);
        if out_shape.iter().product::<usize>() != ids.len() {
            return Err(Error::dim(format!(
                "{} ids do not fill shape {out_shape:?}",
                ids.len()
            )));
        }
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Data(format!("token id {id} outside vocabulary of {vocab}")));
            }
            data.extend_from_slice(&table.data[id * dim..(id + 1) * dim]);
        }
        let mut shape = out_shape.to_vec();
        shape.push(dim);
        Ok(self.push(shape, data, |_| Op::Embedding {
            table: table.clone(),
            ids: ids.to_vec(),
        }))
    }

    /// Same-padded, stride-1 convolution along the length axis.
    /// `x: [.., len, cin]`, `w: [width, cin, cout]`, `b: [cout]`.
    pub fn conv1d(&mut self, x: &Var, w: &Var, b: &Var) -> Result<Var> {
        let (outer, len, cin) = seq_dims(&x.shape, "conv1d")?;
        if w.shape.len() != 3 || w.shape[1] != cin || b.shape != [w.shape[2]] {
            return Err(Error::dim(format!(
                "conv1d input {:?} with filters {:?} and bias {:?}",
                x.shape, w.shape, b.shape
            )));
        }
        let (k, cout) = (w.shape[0], w.shape[2]);
        if k % 2 == 0 {
            return Err(Error::Config(format!("conv1d kernel width {k} must be odd")));
        }
        let cols = kernels::im2col(&x.data, outer, len, cin, k);
        let mut y = kernels::matmul(&cols, &w.data, outer * len, k * cin, cout);
        kernels::add_rows(&mut y, &b.data);
        let mut shape = x.shape.clone();
        *shape.last_mut().unwrap() = cout;
        let keep_cols = self.recording && (w.requires_grad() || b.requires_grad() || x.requires_grad());
        Ok(self.push(shape, y, |_| Op::Conv1d {
            x: x.clone(),
            w: w.clone(),
            b: b.clone(),
            cols: if keep_cols { cols } else { Vec::new() },
            dims: (outer, len, cin, k),
        }))
    }

    fn check_divisible(len: usize, stride: usize, size: usize, what: &str) -> Result<()> {
        if len % stride != 0 || len < size {
            return Err(Error::Length(format!(
                "{what}: length {len} not divisible by stride {stride}"
            )));
        }
        Ok(())
    }

    pub fn maxpool1d(&mut self, x: &Var, size: usize, stride: usize) -> Result<Var> {
        let (outer, len, ch) = seq_dims(&x.shape, "maxpool1d")?;
        Self::check_divisible(len, stride, size, "maxpool1d")?;
        let (y, argmax) = kernels::maxpool1d(&x.data, outer, len, ch, size, stride);
        let mut shape = x.shape.clone();
        let n = shape.len();
        shape[n - 2] = (len - size) / stride + 1;
        Ok(self.push(shape, y, |_| Op::MaxPool { x: x.clone(), argmax }))
    }

    pub fn avgpool1d(&mut self, x: &Var, size: usize, stride: usize) -> Result<Var> {
        let (outer, len, ch) = seq_dims(&x.shape, "avgpool1d")?;
        Self::check_divisible(len, stride, size, "avgpool1d")?;
        let y = kernels::avgpool1d(&x.data, outer, len, ch, size, stride);
        let mut shape = x.shape.clone();
        let n = shape.len();
        shape[n - 2] = (len - size) / stride + 1;
        Ok(self.push(shape, y, |_| Op::AvgPool1d {
            x: x.clone(),
            dims: (outer, len, ch),
            size,
            stride,
        }))
    }

    /// Max pool over the last two axes.
    pub fn maxpool2d(&mut self, x: &Var, size: usize, stride: usize) -> Result<Var> {
        let (outer, rows, cols) = seq_dims(&x.shape, "maxpool2d")?;
        Self::check_divisible(rows, stride, size, "maxpool2d rows")?;
        Self::check_divisible(cols, stride, size, "maxpool2d cols")?;
        let (y, argmax) = kernels::maxpool2d(&x.data, outer, rows, cols, size, stride);
        let mut shape = x.shape.clone();
        let n = shape.len();
        shape[n - 2] = (rows - size) / stride + 1;
        shape[n - 1] = (cols - size) / stride + 1;
        Ok(self.push(shape, y, |_| Op::MaxPool { x: x.clone(), argmax }))
    }

    pub fn upsample1d(&mut self, x: &Var, factor: usize) -> Result<Var> {
        let (outer, len, ch) = seq_dims(&x.shape, "upsample1d")?;
        if factor == 0 {
            return Err(Error::Config("upsample factor must be positive".into()));
        }
        let y = kernels::upsample1d(&x.data, outer, len, ch, factor);
        let mut shape = x.shape.clone();
        let n = shape.len();
        shape[n - 2] = len * factor;
        Ok(self.push(shape, y, |_| Op::Upsample1d {
            x: x.clone(),
            dims: (outer, len, ch),
            factor,
        }))
    }

    /// Pre-softmax attention scores `[batch, heads, lq, lk]` from
    /// `q: [batch, lq, dim]` and `k: [batch, lk, dim]`. Masked keys hold
    /// [`MASK_VALUE`](super::MASK_VALUE).
    pub fn attention_scores(
        &mut self,
        q: &Var,
        k: &Var,
        heads: usize,
        key_mask: Option<&[f64]>,
    ) -> Result<Var> {
        if q.shape.len() != 3 || k.shape.len() != 3 || q.shape[0] != k.shape[0] || q.shape[2] != k.shape[2] {
            return Err(Error::dim(format!(
                "attention scores of {:?} and {:?}",
                q.shape, k.shape
            )));
        }
        let (batch, lq, dim) = (q.shape[0], q.shape[1], q.shape[2]);
        let lk = k.shape[1];
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("{dim} channels not divisible into {heads} heads")));
        }
        if let Some(m) = key_mask {
            if m.len() != batch * lk {
                return Err(Error::dim(format!("key mask of length {} for {batch}x{lk}", m.len())));
            }
        }
        let s = kernels::attention_scores(&q.data, &k.data, batch, lq, lk, dim, heads, key_mask);
        Ok(self.push(vec![batch, heads, lq, lk], s, |_| Op::AttnScores {
            q: q.clone(),
            k: k.clone(),
            heads,
            key_mask: key_mask.map(<[f64]>::to_vec),
            dims: (batch, lq, lk, dim),
        }))
    }

    /// `probs [batch, heads, lq, lk]` applied to `v [batch, lk, dim]`.
    pub fn attention_context(&mut self, p: &Var, v: &Var) -> Result<Var> {
        if p.shape.len() != 4 || v.shape.len() != 3 || p.shape[0] != v.shape[0] || p.shape[3] != v.shape[1] {
            return Err(Error::dim(format!(
                "attention context of {:?} and {:?}",
                p.shape, v.shape
            )));
        }
        let (batch, heads, lq, lk) = (p.shape[0], p.shape[1], p.shape[2], p.shape[3]);
        let dim = v.shape[2];
        if dim % heads != 0 {
            return Err(Error::Config(format!("{dim} channels not divisible into {heads} heads")));
        }
        let out = kernels::attention_context(&p.data, &v.data, batch, lq, lk, dim, heads);
        Ok(self.push(vec![batch, lq, dim], out, |_| Op::AttnContext {
            p: p.clone(),
            v: v.clone(),
            heads,
            dims: (batch, lq, lk, dim),
        }))
    }

    /// Replaces entries where `mask == 0` by `value`; no gradient flows there.
    pub fn mask_fill(&mut self, x: &Var, mask: &[f64], value: f64) -> Result<Var> {
        if mask.len() != x.numel() {
            return Err(Error::dim(format!(
                "mask of length {} for tensor {:?}",
                mask.len(),
                x.shape
            )));
        }
        let data = x
            .data
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m == 0.0 { value } else { v })
            .collect();
        Ok(self.push(x.shape.clone(), data, |_| Op::MaskFill {
            x: x.clone(),
            mask: mask.to_vec(),
        }))
    }

    /// Picks channel `index` of the last axis, dropping that axis.
    pub fn select_last(&mut self, x: &Var, index: usize) -> Result<Var> {
        let ch = *x.shape.last().ok_or_else(|| Error::dim("select on a scalar"))?;
        if index >= ch {
            return Err(Error::dim(format!("channel {index} of {:?}", x.shape)));
        }
        let data = x.data.iter().skip(index).step_by(ch).copied().collect();
        let shape = x.shape[..x.shape.len() - 1].to_vec();
        Ok(self.push(shape, data, |_| Op::SelectLast {
            x: x.clone(),
            index,
            ch,
        }))
    }

    pub fn reshape(&mut self, x: &Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != x.numel() {
            return Err(Error::dim(format!("cannot reshape {:?} into {shape:?}", x.shape)));
        }
        Ok(self.push(shape.to_vec(), x.data.as_ref().clone(), |_| Op::Reshape { x: x.clone() }))
    }

    /// Scalar `sum_i w_i * x_i`. Entries with zero weight are skipped, so
    /// their values (even non-finite ones) never reach the result.
    pub fn weighted_sum(&mut self, x: &Var, w: &[f64]) -> Result<Var> {
        if w.len() != x.numel() {
            return Err(Error::dim(format!("{} weights for tensor {:?}", w.len(), x.shape)));
        }
        let v = x
            .data
            .iter()
            .zip(w)
            .filter(|(_, &wi)| wi != 0.0)
            .map(|(&xi, &wi)| wi * xi)
            .sum();
        Ok(self.push(vec![], vec![v], |_| Op::WeightedSum {
            x: x.clone(),
            w: w.to_vec(),
        }))
    }

    /// Scalar `sum_i w_i * (x_i - target_i)^2`, skipping zero-weight entries.
    pub fn weighted_sq_err(&mut self, x: &Var, target: &[f64], w: &[f64]) -> Result<Var> {
        if w.len() != x.numel() || target.len() != x.numel() {
            return Err(Error::dim(format!(
                "{} targets and {} weights for tensor {:?}",
                target.len(),
                w.len(),
                x.shape
            )));
        }
        let mut v = 0.0;
        for i in 0..w.len() {
            if w[i] != 0.0 {
                let d = x.data[i] - target[i];
                v += w[i] * d * d;
            }
        }
        Ok(self.push(vec![], vec![v], |_| Op::WeightedSqErr {
            x: x.clone(),
            target: target.to_vec(),
            w: w.to_vec(),
        }))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: &Var) -> Result<Gradients> {
        if loss.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let Some(root) = loss.id else {
            return Ok(Gradients { grads });
        };
        grads[root] = Some(vec![1.0]);
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            backprop(&self.nodes[id], &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Accumulates into the gradient slot of `v`, allocating zeros on first use.
fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], v: &Var) -> Option<&'a mut Vec<f64>> {
    let id = v.id?;
    Some(grads[id].get_or_insert_with(|| vec![0.0; v.numel()]))
}

fn backprop(op: &Op, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match op {
        Op::Leaf => {}
        Op::MatMul { a, b, m, k, n } => {
            if let Some(ga) = slot(grads, a) {
                kernels::matmul_nt_acc(g, &b.data, ga, *m, *n, *k);
            }
            if let Some(gb) = slot(grads, b) {
                kernels::matmul_tn_acc(&a.data, g, gb, *k, *m, *n);
            }
        }
        Op::Add { a, b } => {
            if let Some(ga) = slot(grads, a) {
                ga.iter_mut().zip(g).for_each(|(d, s)| *d += s);
            }
            if let Some(gb) = slot(grads, b) {
                let nb = gb.len();
                for (i, s) in g.iter().enumerate() {
                    gb[i % nb] += s;
                }
            }
        }
        Op::Sub { a, b } => {
            if let Some(ga) = slot(grads, a) {
                ga.iter_mut().zip(g).for_each(|(d, s)| *d += s);
            }
            if let Some(gb) = slot(grads, b) {
                gb.iter_mut().zip(g).for_each(|(d, s)| *d -= s);
            }
        }
        Op::Mul { a, b } => {
            if let Some(ga) = slot(grads, a) {
                for i in 0..g.len() {
                    ga[i] += g[i] * b.data[i];
                }
            }
            if let Some(gb) = slot(grads, b) {
                for i in 0..g.len() {
                    gb[i] += g[i] * a.data[i];
                }
            }
        }
        Op::Scale { a, c } => {
            if let Some(ga) = slot(grads, a) {
                ga.iter_mut().zip(g).for_each(|(d, s)| *d += c * s);
            }
        }
        Op::Sum { a } => {
            if let Some(ga) = slot(grads, a) {
                ga.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Gelu { a } => {
            if let Some(ga) = slot(grads, a) {
                for i in 0..g.len() {
                    ga[i] += g[i] * kernels::gelu_grad(a.data[i]);
                }
            }
        }
        Op::LayerNorm { x, gain, bias, xhat, rstd } => {
            let cols = gain.numel();
            if let Some(gg) = slot(grads, gain) {
                for (i, s) in g.iter().enumerate() {
                    gg[i % cols] += s * xhat[i];
                }
            }
            if let Some(gb) = slot(grads, bias) {
                for (i, s) in g.iter().enumerate() {
                    gb[i % cols] += s;
                }
            }
            if let Some(gx) = slot(grads, x) {
                let n = cols as f64;
                for (r, &rs) in rstd.iter().enumerate() {
                    let row = r * cols..(r + 1) * cols;
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for i in row.clone() {
                        let dh = g[i] * gain.data[i - r * cols];
                        sum_dh += dh;
                        sum_dh_h += dh * xhat[i];
                    }
                    for i in row {
                        let dh = g[i] * gain.data[i - r * cols];
                        gx[i] += rs * (dh - sum_dh / n - xhat[i] * sum_dh_h / n);
                    }
                }
            }
        }
        Op::Softmax { x, y, dims: (outer, n, inner) } => {
            if let Some(gx) = slot(grads, x) {
                for o in 0..*outer {
                    for i in 0..*inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let dot: f64 = (0..*n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..*n {
                            gx[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
            }
        }
        Op::LogSoftmax { x, y, dims: (outer, n, inner) } => {
            if let Some(gx) = slot(grads, x) {
                for o in 0..*outer {
                    for i in 0..*inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let total: f64 = (0..*n).map(|j| g[idx(j)]).sum();
                        for j in 0..*n {
                            gx[idx(j)] += g[idx(j)] - y[idx(j)].exp() * total;
                        }
                    }
                }
            }
        }
        Op::Dropout { x, mask } => {
            if let Some(gx) = slot(grads, x) {
                for i in 0..g.len() {
                    gx[i] += g[i] * mask[i];
                }
            }
        }
        Op::Embedding { table, ids } => {
            if let Some(gt) = slot(grads, table) {
                let dim = table.shape[1];
                for (p, &id) in ids.iter().enumerate() {
                    let dst = &mut gt[id * dim..(id + 1) * dim];
                    for (d, s) in dst.iter_mut().zip(&g[p * dim..(p + 1) * dim]) {
                        *d += s;
                    }
                }
            }
        }
        Op::Conv1d { x, w, b, cols, dims: (outer, len, cin, k) } => {
            let cout = b.numel();
            let rows = outer * len;
            if let Some(gb) = slot(grads, b) {
                for row in g.chunks_exact(cout) {
                    gb.iter_mut().zip(row).for_each(|(d, s)| *d += s);
                }
            }
            if let Some(gw) = slot(grads, w) {
                kernels::matmul_tn_acc(cols, g, gw, k * cin, rows, cout);
            }
            if x.requires_grad() {
                let mut dcols = vec![0.0; rows * k * cin];
                kernels::matmul_nt_acc(g, &w.data, &mut dcols, rows, cout, k * cin);
                let dx = kernels::col2im(&dcols, *outer, *len, *cin, *k);
                let gx = slot(grads, x).unwrap();
                gx.iter_mut().zip(&dx).for_each(|(d, s)| *d += s);
            }
        }
        Op::MaxPool { x, argmax } => {
            if let Some(gx) = slot(grads, x) {
                for (s, &i) in g.iter().zip(argmax) {
                    gx[i] += s;
                }
            }
        }
        Op::AvgPool1d { x, dims: (outer, len, ch), size, stride } => {
            if let Some(gx) = slot(grads, x) {
                let out_len = (len - size) / stride + 1;
                let inv = 1.0 / *size as f64;
                for o in 0..*outer {
                    for p in 0..out_len {
                        for c in 0..*ch {
                            let s = g[(o * out_len + p) * ch + c] * inv;
                            for j in 0..*size {
                                gx[(o * len + p * stride + j) * ch + c] += s;
                            }
                        }
                    }
                }
            }
        }
        Op::Upsample1d { x, dims: (outer, len, ch), factor } => {
            if let Some(gx) = slot(grads, x) {
                for o in 0..*outer {
                    for t in 0..*len {
                        for r in 0..*factor {
                            let src = ((o * len + t) * factor + r) * ch;
                            for c in 0..*ch {
                                gx[(o * len + t) * ch + c] += g[src + c];
                            }
                        }
                    }
                }
            }
        }
        Op::AttnScores { q, k, heads, key_mask, dims: (batch, lq, lk, dim) } => {
            let (heads, batch, lq, lk, dim) = (*heads, *batch, *lq, *lk, *dim);
            let dh = dim / heads;
            let alpha = 1.0 / (dh as f64).sqrt();
            // Masked keys were overwritten by a constant, so their gradient is zero.
            let mut gs = g.to_vec();
            if let Some(mask) = key_mask {
                for b in 0..batch {
                    for h in 0..heads {
                        for i in 0..lq {
                            let row = ((b * heads + h) * lq + i) * lk;
                            for j in 0..lk {
                                if mask[b * lk + j] == 0.0 {
                                    gs[row + j] = 0.0;
                                }
                            }
                        }
                    }
                }
            }
            if q.requires_grad() {
                let gq = slot(grads, q).unwrap();
                for b in 0..batch {
                    for h in 0..heads {
                        // dQ_bh += alpha * dS (lq x lk) * K_bh (lk x dh)
                        <f64 as Element>::gemm_strided(
                            lq, lk, dh, alpha,
                            &gs[(b * heads + h) * lq * lk..], lk as isize, 1,
                            &k.data[b * lk * dim + h * dh..], dim as isize, 1,
                            1.0,
                            &mut gq[b * lq * dim + h * dh..], dim as isize, 1,
                        );
                    }
                }
            }
            if k.requires_grad() {
                let gk = slot(grads, k).unwrap();
                for b in 0..batch {
                    for h in 0..heads {
                        // dK_bh += alpha * dS^T (lk x lq) * Q_bh (lq x dh)
                        <f64 as Element>::gemm_strided(
                            lk, lq, dh, alpha,
                            &gs[(b * heads + h) * lq * lk..], 1, lk as isize,
                            &q.data[b * lq * dim + h * dh..], dim as isize, 1,
                            1.0,
                            &mut gk[b * lk * dim + h * dh..], dim as isize, 1,
                        );
                    }
                }
            }
        }
        Op::AttnContext { p, v, heads, dims: (batch, lq, lk, dim) } => {
            let (heads, batch, lq, lk, dim) = (*heads, *batch, *lq, *lk, *dim);
            let dh = dim / heads;
            if p.requires_grad() {
                let gp = slot(grads, p).unwrap();
                for b in 0..batch {
                    for h in 0..heads {
                        // dP_bh += dC_bh (lq x dh) * V_bh^T (dh x lk)
                        <f64 as Element>::gemm_strided(
                            lq, dh, lk, 1.0,
                            &g[b * lq * dim + h * dh..], dim as isize, 1,
                            &v.data[b * lk * dim + h * dh..], 1, dim as isize,
                            1.0,
                            &mut gp[(b * heads + h) * lq * lk..], lk as isize, 1,
                        );
                    }
                }
            }
            if v.requires_grad() {
                let gv = slot(grads, v).unwrap();
                for b in 0..batch {
                    for h in 0..heads {
                        // dV_bh += P_bh^T (lk x lq) * dC_bh (lq x dh)
                        <f64 as Element>::gemm_strided(
                            lk, lq, dh, 1.0,
                            &p.data[(b * heads + h) * lq * lk..], 1, lk as isize,
                            &g[b * lq * dim + h * dh..], dim as isize, 1,
                            1.0,
                            &mut gv[b * lk * dim + h * dh..], dim as isize, 1,
                        );
                    }
                }
            }
        }
        Op::MaskFill { x, mask } => {
            if let Some(gx) = slot(grads, x) {
                for i in 0..g.len() {
                    if mask[i] != 0.0 {
                        gx[i] += g[i];
                    }
                }
            }
        }
        Op::SelectLast { x, index, ch } => {
            if let Some(gx) = slot(grads, x) {
                for (p, s) in g.iter().enumerate() {
                    gx[p * ch + index] += s;
                }
            }
        }
        Op::WeightedSum { x, w } => {
            if let Some(gx) = slot(grads, x) {
                for i in 0..w.len() {
                    if w[i] != 0.0 {
                        gx[i] += g[0] * w[i];
                    }
                }
            }
        }
        Op::WeightedSqErr { x, target, w } => {
            if let Some(gx) = slot(grads, x) {
                for i in 0..w.len() {
                    if w[i] != 0.0 {
                        gx[i] += g[0] * 2.0 * w[i] * (x.data[i] - target[i]);
                    }
                }
            }
        }
        Op::Reshape { x } => {
            if let Some(gx) = slot(grads, x) {
                gx.iter_mut().zip(g).for_each(|(d, s)| *d += s);
            }
        }
    }
}
