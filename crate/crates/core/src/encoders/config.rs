use serde::{Deserialize, Serialize};

use crate::error::{HptError, Result};

/// Shape of the toy transformer encoders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    /// Seed of the frozen weights that stand in for pre-trained encoders.
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 3,
            model_dim: 32,
            num_heads: 4,
            head_dim: 8,
            max_seq_len: 96,
            vocab_size: 512,
            seed: 7,
        }
    }
}

impl EncoderConfig {
    pub fn mlp_dim(&self) -> usize {
        4 * self.model_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.num_heads == 0 || self.head_dim == 0 {
            return Err(HptError::Config(
                "num_layers, num_heads and head_dim must be positive".into(),
            ));
        }
        if self.model_dim != self.num_heads * self.head_dim {
            return Err(HptError::Config(format!(
                "model_dim {} != num_heads {} x head_dim {}",
                self.model_dim, self.num_heads, self.head_dim
            )));
        }
        if self.vocab_size <= super::tokenizer::FIRST_WORD_ID {
            return Err(HptError::Config(format!(
                "vocab_size {} leaves no room for words",
                self.vocab_size
            )));
        }
        if self.max_seq_len == 0 {
            return Err(HptError::Config("max_seq_len must be positive".into()));
        }
        Ok(())
    }
}
