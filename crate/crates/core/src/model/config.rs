use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::impl_kv_fields;

/// Architecture hyperparameters of the compressed student.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_encoder_blocks: usize,
    pub embedding_size: usize,
    pub hidden_size: usize,
    pub ff_size: usize,
    pub n_heads: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    /// Filter count shared by the four decoder convolutions.
    pub conv3to6_filters: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub kernel_width: usize,
    pub layer_norm_eps: f64,
}

impl_kv_fields!(ModelConfig {
    n_encoder_blocks,
    embedding_size,
    hidden_size,
    ff_size,
    n_heads,
    conv1_filters,
    conv2_filters,
    conv3to6_filters,
    vocab_size,
    max_seq_len,
    kernel_width,
    layer_norm_eps,
});

/// Sequence-length reduction between the input and the encoder blocks.
pub const COMPRESSION: usize = 4;

/// Question/context segment vocabulary size.
pub const N_SEGMENTS: usize = 2;

impl ModelConfig {
    /// Full-size architecture: 8 blocks, e'=96, d'=480, 16 heads, l=384.
    pub fn full_size(vocab_size: usize) -> Self {
        ModelConfig {
            n_encoder_blocks: 8,
            embedding_size: 96,
            hidden_size: 480,
            ff_size: 1440,
            n_heads: 16,
            conv1_filters: 96,
            conv2_filters: 192,
            conv3to6_filters: 480,
            vocab_size,
            max_seq_len: 384,
            kernel_width: 3,
            layer_norm_eps: 1e-12,
        }
    }

    /// Workstation-sized student with `hidden_size` channels throughout the
    /// encoder and decoder.
    pub fn desk(vocab_size: usize, max_seq_len: usize, hidden_size: usize, n_blocks: usize, n_heads: usize) -> Self {
        ModelConfig {
            n_encoder_blocks: n_blocks,
            embedding_size: (hidden_size / 2).max(1),
            hidden_size,
            ff_size: 2 * hidden_size,
            n_heads,
            conv1_filters: (hidden_size / 2).max(1),
            conv2_filters: hidden_size,
            conv3to6_filters: hidden_size,
            vocab_size,
            max_seq_len,
            kernel_width: 3,
            layer_norm_eps: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("n_encoder_blocks", self.n_encoder_blocks),
            ("embedding_size", self.embedding_size),
            ("hidden_size", self.hidden_size),
            ("ff_size", self.ff_size),
            ("n_heads", self.n_heads),
            ("conv1_filters", self.conv1_filters),
            ("conv2_filters", self.conv2_filters),
            ("conv3to6_filters", self.conv3to6_filters),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
            ("kernel_width", self.kernel_width),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.hidden_size % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_size {} not divisible by n_heads {}",
                self.hidden_size, self.n_heads
            )));
        }
        if self.max_seq_len % COMPRESSION != 0 {
            return Err(Error::Config(format!(
                "max_seq_len {} not divisible by {COMPRESSION}",
                self.max_seq_len
            )));
        }
        if self.kernel_width % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel_width {} must be odd",
                self.kernel_width
            )));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }
}
