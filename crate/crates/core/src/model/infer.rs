//! Tape-free forward passes over plain buffers, generic over `f32`/`f64`.
//! Used for timing and for fast inference; agrees with the graph forward.

use std::collections::HashMap;

use super::batch::{compress_mask, Batch};
use super::config::{ModelConfig, COMPRESSION};
use super::control::ControlModel;
use super::params::ParamStore;
use super::student::StudentModel;
use crate::error::Result;
use crate::tensor::kernels::{self, Element};
use crate::tensor::MASK_VALUE;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    Student,
    Control,
}

/// Frozen weights converted to element type `T`.
pub struct InferenceModel<T: Element> {
    pub architecture: Architecture,
    pub config: ModelConfig,
    weights: HashMap<String, Vec<T>>,
    n_params: usize,
}

fn convert<T: Element>(params: &ParamStore) -> HashMap<String, Vec<T>> {
    params
        .iter()
        .map(|(n, t)| (n.to_string(), t.data().iter().map(|&v| T::from_f64(v)).collect()))
        .collect()
}

impl<T: Element> InferenceModel<T> {
    pub fn student(model: &StudentModel) -> Self {
        InferenceModel {
            architecture: Architecture::Student,
            config: model.config.clone(),
            weights: convert(&model.params),
            n_params: model.num_params(),
        }
    }

    pub fn control(model: &ControlModel) -> Self {
        InferenceModel {
            architecture: Architecture::Control,
            config: model.config.clone(),
            weights: convert(&model.params),
            n_params: model.num_params(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.n_params
    }

    fn w(&self, name: &str) -> &[T] {
        self.weights
            .get(name)
            .unwrap_or_else(|| panic!("no parameter {name}"))
    }

    fn linear(&self, prefix: &str, x: &[T], rows: usize, fan_in: usize) -> Vec<T> {
        let b = self.w(&format!("{prefix}.bias"));
        let mut y = kernels::matmul(x, self.w(&format!("{prefix}.weight")), rows, fan_in, b.len());
        kernels::add_rows(&mut y, b);
        y
    }

    fn layer_norm(&self, prefix: &str, x: &[T]) -> Vec<T> {
        let gain = self.w(&format!("{prefix}.gain"));
        let eps = T::from_f64(self.config.layer_norm_eps);
        kernels::layer_norm(x, gain, self.w(&format!("{prefix}.bias")), gain.len(), eps).0
    }

    fn conv_gelu(&self, prefix: &str, x: &[T], outer: usize, len: usize, cin: usize) -> Vec<T> {
        let k = self.config.kernel_width;
        let mut y = kernels::conv1d(
            x,
            self.w(&format!("{prefix}.weight")),
            self.w(&format!("{prefix}.bias")),
            outer,
            len,
            cin,
            k,
        );
        y.iter_mut().for_each(|v| *v = kernels::gelu(*v));
        y
    }

    fn embeddings(&self, batch: &Batch) -> Vec<T> {
        let e = self.config.embedding_size;
        let tok = self.w("embeddings.token");
        let seg = self.w("embeddings.segment");
        let pos = self.w("embeddings.position");
        let mut x = vec![T::zero(); batch.batch * batch.len * e];
        for (p, row) in x.chunks_exact_mut(e).enumerate() {
            let t = batch.token_ids[p];
            let s = batch.segment_ids[p];
            let q = p % batch.len;
            for c in 0..e {
                row[c] = tok[t * e + c] + seg[s * e + c] + pos[q * e + c];
            }
        }
        self.layer_norm("embeddings.ln", &x)
    }

    fn encoder_block(&self, prefix: &str, x: &[T], batch: usize, len: usize, key_mask: &[f64]) -> Vec<T> {
        let d = self.config.hidden_size;
        let heads = self.config.n_heads;
        let rows = batch * len;
        let q = self.linear(&format!("{prefix}.attn.q"), x, rows, d);
        let k = self.linear(&format!("{prefix}.attn.k"), x, rows, d);
        let v = self.linear(&format!("{prefix}.attn.v"), x, rows, d);
        let scores = kernels::attention_scores(&q, &k, batch, len, len, d, heads, Some(key_mask));
        let probs = kernels::softmax_axis(&scores, batch * heads * len, len, 1);
        let ctx = kernels::attention_context(&probs, &v, batch, len, len, d, heads);
        let mut h = self.linear(&format!("{prefix}.attn.o"), &ctx, rows, d);
        h.iter_mut().zip(x).for_each(|(a, b)| *a = *a + *b);
        let h = self.layer_norm(&format!("{prefix}.attn_ln"), &h);
        let ff = self.config.ff_size;
        let mut f = self.linear(&format!("{prefix}.ff.in"), &h, rows, d);
        f.iter_mut().for_each(|v| *v = kernels::gelu(*v));
        let mut f = self.linear(&format!("{prefix}.ff.out"), &f, rows, ff);
        f.iter_mut().zip(&h).for_each(|(a, b)| *a = *a + *b);
        self.layer_norm(&format!("{prefix}.ff_ln"), &f)
    }

    fn head(&self, x: &[T], batch: &Batch, width: usize) -> (Vec<T>, Vec<T>) {
        let logits = self.linear("head", x, batch.batch * batch.len, width);
        let mask_value = T::from_f64(MASK_VALUE);
        let mut start = Vec::with_capacity(batch.batch * batch.len);
        let mut end = Vec::with_capacity(batch.batch * batch.len);
        for (p, pair) in logits.chunks_exact(2).enumerate() {
            let valid = batch.attention_mask[p] != 0.0;
            start.push(if valid { pair[0] } else { mask_value });
            end.push(if valid { pair[1] } else { mask_value });
        }
        (start, end)
    }

    /// Start and end logits, each `[B * l]` row-major.
    pub fn forward(&self, batch: &Batch) -> Result<(Vec<T>, Vec<T>)> {
        let c = &self.config;
        StudentModel::check_batch(c, batch)?;
        let (b, l) = (batch.batch, batch.len);
        let emb = self.embeddings(batch);
        match self.architecture {
            Architecture::Control => {
                let x = self.linear("expand", &emb, b * l, c.embedding_size);
                let mut h = self.layer_norm("expand_ln", &x);
                for j in 0..c.n_encoder_blocks {
                    h = self.encoder_block(&format!("blocks.{j}"), &h, b, l, &batch.attention_mask);
                }
                Ok(self.head(&h, batch, c.hidden_size))
            }
            Architecture::Student => {
                let l4 = l / COMPRESSION;
                let cmask = compress_mask(&batch.attention_mask, b, l)?;
                let c1 = self.conv_gelu("conv1", &emb, b, l, c.embedding_size);
                let x = kernels::maxpool1d(&c1, b, l, c.conv1_filters, 2, 2).0;
                let c2 = self.conv_gelu("conv2", &x, b, l / 2, c.conv1_filters);
                let x = kernels::maxpool1d(&c2, b, l / 2, c.conv2_filters, 2, 2).0;
                let x = self.linear("expand", &x, b * l4, c.conv2_filters);
                let mut h = self.layer_norm("expand_ln", &x);
                for j in 0..c.n_encoder_blocks {
                    h = self.encoder_block(&format!("blocks.{j}"), &h, b, l4, &cmask);
                }
                let f = c.conv3to6_filters;
                let u = kernels::upsample1d(&h, b, l4, c.hidden_size, 2);
                let mut y = self.conv_gelu("conv3", &u, b, l / 2, c.hidden_size);
                let s = if c.conv2_filters != f {
                    self.linear("skip2", &c2, b * l / 2, c.conv2_filters)
                } else {
                    c2
                };
                y.iter_mut().zip(&s).for_each(|(a, b)| *a = *a + *b);
                let y = self.layer_norm("conv3_ln", &y);
                let u = kernels::upsample1d(&y, b, l / 2, f, 2);
                let mut y = self.conv_gelu("conv4", &u, b, l, f);
                let s = if c.conv1_filters != f {
                    self.linear("skip1", &c1, b * l, c.conv1_filters)
                } else {
                    c1
                };
                y.iter_mut().zip(&s).for_each(|(a, b)| *a = *a + *b);
                let mut y = self.layer_norm("conv4_ln", &y);
                for name in ["conv5", "conv6"] {
                    let mut r = self.conv_gelu(name, &y, b, l, f);
                    r.iter_mut().zip(&y).for_each(|(a, b)| *a = *a + *b);
                    y = self.layer_norm(&format!("{name}_ln"), &r);
                }
                Ok(self.head(&y, batch, f))
            }
        }
    }
}
