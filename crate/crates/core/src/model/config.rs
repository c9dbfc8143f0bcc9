use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_ctx: usize,
    #[serde(default)]
    pub dropout: f64,
}

impl ModelConfig {
    /// 6 layers, 6 heads, width 384: the CPU-trainable default.
    pub fn desk(vocab_size: usize) -> Self {
        Self { n_layers: 6, n_heads: 6, d_model: 384, d_ff: 1536, vocab_size, max_ctx: 256, dropout: 0.0 }
    }

    /// A two-layer model fast enough for test suites on a single core.
    pub fn toy(vocab_size: usize) -> Self {
        Self { n_layers: 2, n_heads: 4, d_model: 64, d_ff: 256, vocab_size, max_ctx: 256, dropout: 0.0 }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_ctx", self.max_ctx),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.dropout != 0.0 {
            return Err(Error::Config("only dropout = 0 is supported".into()));
        }
        Ok(())
    }

    /// Training sequences of `sample_len` tokens must fit the context.
    pub fn check_sample_len(&self, sample_len: usize) -> Result<()> {
        if sample_len > self.max_ctx {
            return Err(Error::ContextLength { len: sample_len, max_ctx: self.max_ctx });
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        let (d, f, v, c) = (self.d_model, self.d_ff, self.vocab_size, self.max_ctx);
        let layer = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
        v * d + c * d + self.n_layers * layer + 2 * d + d * v
    }
}
