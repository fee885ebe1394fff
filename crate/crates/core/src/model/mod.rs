//! Tiny decoder-only transformer with exposed attention and pre-softmax masking.
//!
//! Two backends implement [`ForwardBackend`]: [`Model`], a seeded toy decoder,
//! and [`ScriptedModel`], which replays caller-supplied attention tensors and
//! logits so the downstream pipeline can be checked against hand-computed values.

mod attention;
mod config;
mod mask;
mod scripted;
mod sequence;
mod transformer;

use serde::{Deserialize, Serialize};

pub use attention::{AttentionTensor, ROW_SUM_TOLERANCE};
pub use config::{ModelConfig, ModelDims, TokenId};
pub use mask::{mask_signature, AttentionMask, BlockedKey, QuerySpan};
pub use scripted::{ScriptedModel, WILDCARD_SIGNATURE};
pub use sequence::{SpanMap, TokenSequence, TokenType};
pub use transformer::Model;

use crate::error::{Error, Result};

/// Next-token logits over the whole vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogitVector(pub Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("logit {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn softmax(&self) -> Vec<f64> {
        softmax(&self.0)
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b] >= v => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Output of one forward pass: logits at the final position plus every attention row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardResult {
    pub logits: LogitVector,
    pub attention: AttentionTensor,
}

impl ForwardResult {
    /// Checks the result against the backend dimensions and a sequence length.
    pub fn validate(&self, dims: &ModelDims, seq_len: usize) -> Result<()> {
        if self.logits.len() != dims.vocab_size {
            return Err(Error::Input(format!(
                "logits have length {}, vocabulary is {}",
                self.logits.len(),
                dims.vocab_size
            )));
        }
        if self.logits.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("logits contain non-finite values".into()));
        }
        let att = &self.attention;
        if att.num_layers() != dims.num_layers
            || att.num_heads() != dims.num_heads
            || att.seq_len() != seq_len
        {
            return Err(Error::Input(format!(
                "attention shape [{}, {}, {}] does not match [{}, {}, {}]",
                att.num_layers(),
                att.num_heads(),
                att.seq_len(),
                dims.num_layers,
                dims.num_heads,
                seq_len
            )));
        }
        att.validate()
    }
}

/// Anything that can run a (possibly masked) forward pass over a token sequence.
///
/// Implementations must be pure: the same `(sequence, mask)` always yields the
/// same result, so they can be shared across threads.
pub trait ForwardBackend: Sync {
    fn dims(&self) -> ModelDims;

    fn forward(&self, seq: &TokenSequence, mask: Option<&AttentionMask>) -> Result<ForwardResult>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform() {
        assert_eq!(softmax(&[0.0; 4]), vec![0.25; 4]);
    }

    #[test]
    fn softmax_large_inputs_do_not_overflow() {
        assert_eq!(softmax(&[1000.0, 1000.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_two_point() {
        // e^2 / (e^2 + 1)
        let p = softmax(&[2.0, 0.0]);
        assert!((p[0] - 0.8808).abs() < 1e-4);
        assert!((p[1] - 0.1192).abs() < 1e-4);
        let p = softmax(&[4.0, -2.0]);
        assert!((p[0] - 0.9975).abs() < 1e-4);
        assert!((p[1] - 0.0025).abs() < 1e-4);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax(&[]), None);
    }

    #[test]
    fn logit_vector_rejects_nan() {
        assert!(LogitVector::new(vec![0.0, f64::NAN]).is_err());
        assert!(LogitVector::new(vec![0.0, f64::INFINITY]).is_err());
    }
}
