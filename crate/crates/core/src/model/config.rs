use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::sha256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Scale-only root-mean-square normalization.
    Rms,
    /// Mean-centred layer normalization with bias.
    Layer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_emb: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_width: usize,
    pub vocab_size: usize,
    /// Decode cap, and the longest accepted gold response.
    pub max_len: usize,
    /// Longest accepted encoder input.
    pub max_input: usize,
    pub rel_pos_buckets: usize,
    pub rel_pos_max_distance: usize,
    pub use_exemplars: bool,
    /// Number of exemplars retrieved per context.
    pub q: usize,
    pub norm: NormKind,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// The desk preset with no vocabulary yet.
    fn default() -> Self {
        Self::desk(0)
    }
}

impl ModelConfig {
    /// Two layers, width 64, four heads, feed-forward 256.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            n_emb: 64,
            n_layers: 2,
            n_heads: 4,
            ffn_width: 256,
            vocab_size,
            max_len: 40,
            max_input: 512,
            rel_pos_buckets: 32,
            rel_pos_max_distance: 128,
            use_exemplars: true,
            q: 10,
            norm: NormKind::Rms,
            dropout: 0.0,
            seed: 0,
        }
    }

    /// Six layers, width 512, eight heads, feed-forward 2048.
    pub fn full_size(vocab_size: usize) -> Self {
        Self { n_emb: 512, n_layers: 6, n_heads: 8, ffn_width: 2048, ..Self::desk(vocab_size) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.n_emb % self.n_heads != 0 {
            return Err(Error::Contract(format!(
                "n_emb {} not divisible by n_heads {}",
                self.n_emb, self.n_heads
            )));
        }
        if self.vocab_size < 4 {
            return Err(Error::Contract("vocab_size must cover the 4 special tokens".into()));
        }
        if self.n_layers == 0 || self.max_len == 0 || self.rel_pos_buckets < 2 {
            return Err(Error::Contract("degenerate model configuration".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Contract(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.n_emb / self.n_heads
    }

    pub fn digest(&self) -> [u8; 32] {
        sha256(&serde_json::to_vec(self).expect("config serializes"))
    }
}
