use std::collections::HashMap;

use super::{
    mask_signature, AttentionMask, ForwardBackend, ForwardResult, ModelDims, TokenSequence,
};
use crate::error::{Error, Result};

/// Signature that matches any mask at a given sequence length when no exact entry exists.
pub const WILDCARD_SIGNATURE: &str = "*";

/// Replay backend: returns pre-recorded forward results keyed by
/// `(sequence length, mask signature)`.
///
/// Entries are validated against the declared dimensions on insertion, so
/// replayed results satisfy the same invariants as [`super::Model`] output.
#[derive(Debug, Clone)]
pub struct ScriptedModel {
    dims: ModelDims,
    entries: HashMap<(usize, String), ForwardResult>,
}

impl ScriptedModel {
    pub fn new(dims: ModelDims) -> Self {
        Self {
            dims,
            entries: HashMap::new(),
        }
    }

    /// Records the result for a sequence length and mask signature
    /// (see [`AttentionMask::signature`], `"none"`, or [`WILDCARD_SIGNATURE`]).
    pub fn insert(
        &mut self,
        seq_len: usize,
        signature: impl Into<String>,
        result: ForwardResult,
    ) -> Result<()> {
        result
            .validate(&self.dims, seq_len)
            .map_err(|e| Error::Script(format!("invalid scripted result: {e}")))?;
        self.entries.insert((seq_len, signature.into()), result);
        Ok(())
    }

    pub fn with(
        mut self,
        seq_len: usize,
        signature: impl Into<String>,
        result: ForwardResult,
    ) -> Result<Self> {
        self.insert(seq_len, signature, result)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ForwardBackend for ScriptedModel {
    fn dims(&self) -> ModelDims {
        self.dims
    }

    fn forward(&self, seq: &TokenSequence, mask: Option<&AttentionMask>) -> Result<ForwardResult> {
        let signature = mask_signature(mask);
        let len = seq.len();
        self.entries
            .get(&(len, signature.clone()))
            .or_else(|| self.entries.get(&(len, WILDCARD_SIGNATURE.to_string())))
            .cloned()
            .ok_or_else(|| {
                Error::Script(format!(
                    "no scripted entry for sequence length {len} and mask `{signature}`"
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{softmax, AttentionTensor, LogitVector};

    fn dims() -> ModelDims {
        ModelDims {
            num_layers: 3,
            num_heads: 1,
            vocab_size: 2,
            num_image_tokens: 2,
            eos_id: 0,
        }
    }

    fn seq() -> TokenSequence {
        TokenSequence::from_prompt(&[1], &[1, 1], &[1]).unwrap()
    }

    #[test]
    fn replays_verbatim() {
        let result = ForwardResult {
            logits: LogitVector(vec![4.0, -2.0]),
            attention: AttentionTensor::uniform_causal(3, 1, 4),
        };
        let script = ScriptedModel::new(dims())
            .with(4, "none", result.clone())
            .unwrap();
        let got = script.forward(&seq(), None).unwrap();
        assert_eq!(got, result);
        let p = softmax(got.logits.as_slice());
        assert!((p[0] - 0.9975).abs() < 1e-4);
    }

    #[test]
    fn missing_entry_is_script_error() {
        let result = ForwardResult {
            logits: LogitVector(vec![0.0, 0.0]),
            attention: AttentionTensor::uniform_causal(3, 1, 4),
        };
        let script = ScriptedModel::new(dims()).with(4, "none", result).unwrap();
        let mut mask = AttentionMask::new(0);
        mask.block_key(1);
        assert!(matches!(
            script.forward(&seq(), Some(&mask)),
            Err(Error::Script(_))
        ));
    }

    #[test]
    fn wildcard_matches_any_mask() {
        let result = ForwardResult {
            logits: LogitVector(vec![0.0, 1.0]),
            attention: AttentionTensor::uniform_causal(3, 1, 4),
        };
        let script = ScriptedModel::new(dims())
            .with(4, WILDCARD_SIGNATURE, result.clone())
            .unwrap();
        let mut mask = AttentionMask::new(0);
        mask.block_key(1);
        assert_eq!(script.forward(&seq(), Some(&mask)).unwrap(), result);
    }

    #[test]
    fn shape_mismatch_rejected_on_insert() {
        let result = ForwardResult {
            logits: LogitVector(vec![0.0, 0.0, 0.0]),
            attention: AttentionTensor::uniform_causal(3, 1, 4),
        };
        assert!(ScriptedModel::new(dims()).with(4, "none", result).is_err());
    }
}
