use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vocabulary index.
pub type TokenId = u32;

/// Shape and seed of the toy decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    /// Includes the reserved end-of-sequence id.
    pub vocab_size: usize,
    pub num_image_tokens: usize,
    pub eos_id: TokenId,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            num_heads: 4,
            model_dim: 64,
            vocab_size: 64,
            num_image_tokens: 16,
            eos_id: 0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 3 {
            // scoring happens at the second layer and masking needs deeper layers
            return Err(Error::Config(format!(
                "num_layers must be at least 3, got {}",
                self.num_layers
            )));
        }
        if self.num_heads == 0 {
            return Err(Error::Config("num_heads must be positive".into()));
        }
        if self.model_dim == 0 || !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "model_dim ({}) must be a positive multiple of num_heads ({})",
                self.model_dim, self.num_heads
            )));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config(format!(
                "vocab_size must be at least 2, got {}",
                self.vocab_size
            )));
        }
        if self.eos_id as usize >= self.vocab_size {
            return Err(Error::Config(format!(
                "eos_id {} outside vocabulary of size {}",
                self.eos_id, self.vocab_size
            )));
        }
        if self.num_image_tokens == 0 {
            return Err(Error::Config("num_image_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            vocab_size: self.vocab_size,
            num_image_tokens: self.num_image_tokens,
            eos_id: self.eos_id,
        }
    }
}

/// The shape facts every backend exposes to the decoding pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub num_layers: usize,
    pub num_heads: usize,
    pub vocab_size: usize,
    pub num_image_tokens: usize,
    pub eos_id: TokenId,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn indivisible_model_dim_rejected() {
        let cfg = ModelConfig {
            model_dim: 10,
            num_heads: 4,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn two_layers_rejected() {
        let cfg = ModelConfig {
            num_layers: 2,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn eos_outside_vocab_rejected() {
        let cfg = ModelConfig {
            vocab_size: 8,
            eos_id: 8,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            vocab_size: 1,
            eos_id: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
