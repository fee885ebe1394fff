use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for causal attention rows summing to one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Attention weights indexed `[layer][head][query][key]`, stored densely.
///
/// Entries with `key > query` are exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTensor {
    num_layers: usize,
    num_heads: usize,
    seq_len: usize,
    values: Vec<f64>,
}

impl AttentionTensor {
    pub fn zeros(num_layers: usize, num_heads: usize, seq_len: usize) -> Self {
        Self {
            num_layers,
            num_heads,
            seq_len,
            values: vec![0.0; num_layers * num_heads * seq_len * seq_len],
        }
    }

    /// Builds a tensor from a row generator. `row(layer, head, query)` returns
    /// the `query + 1` causal weights; the remainder of the row stays zero.
    pub fn from_rows<F>(
        num_layers: usize,
        num_heads: usize,
        seq_len: usize,
        mut row: F,
    ) -> Result<Self>
    where
        F: FnMut(usize, usize, usize) -> Vec<f64>,
    {
        let mut tensor = Self::zeros(num_layers, num_heads, seq_len);
        for layer in 0..num_layers {
            for head in 0..num_heads {
                for query in 0..seq_len {
                    let weights = row(layer, head, query);
                    if weights.len() != query + 1 {
                        return Err(Error::Input(format!(
                            "row ({layer},{head},{query}) has {} weights, expected {}",
                            weights.len(),
                            query + 1
                        )));
                    }
                    tensor.row_mut(layer, head, query)[..=query].copy_from_slice(&weights);
                }
            }
        }
        tensor.validate()?;
        Ok(tensor)
    }

    /// Every causal row spreads its mass evenly over keys `0..=query`.
    pub fn uniform_causal(num_layers: usize, num_heads: usize, seq_len: usize) -> Self {
        let mut tensor = Self::zeros(num_layers, num_heads, seq_len);
        for layer in 0..num_layers {
            for head in 0..num_heads {
                for query in 0..seq_len {
                    let w = 1.0 / (query + 1) as f64;
                    tensor.row_mut(layer, head, query)[..=query].fill(w);
                }
            }
        }
        tensor
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    fn offset(&self, layer: usize, head: usize, query: usize) -> usize {
        ((layer * self.num_heads + head) * self.seq_len + query) * self.seq_len
    }

    pub fn get(&self, layer: usize, head: usize, query: usize, key: usize) -> f64 {
        self.values[self.offset(layer, head, query) + key]
    }

    /// The full row (length `seq_len`) for one query.
    pub fn row(&self, layer: usize, head: usize, query: usize) -> &[f64] {
        let start = self.offset(layer, head, query);
        &self.values[start..start + self.seq_len]
    }

    pub(crate) fn row_mut(&mut self, layer: usize, head: usize, query: usize) -> &mut [f64] {
        let start = self.offset(layer, head, query);
        let len = self.seq_len;
        &mut self.values[start..start + len]
    }

    /// Checks range, causality and row normalization.
    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.num_layers * self.num_heads * self.seq_len * self.seq_len {
            return Err(Error::Input(
                "attention tensor storage does not match its shape".into(),
            ));
        }
        for layer in 0..self.num_layers {
            for head in 0..self.num_heads {
                for query in 0..self.seq_len {
                    let row = self.row(layer, head, query);
                    if row.iter().any(|w| !(0.0..=1.0).contains(w)) {
                        return Err(Error::Input(format!(
                            "attention row ({layer},{head},{query}) has entries outside [0,1]"
                        )));
                    }
                    if row[query + 1..].iter().any(|&w| w != 0.0) {
                        return Err(Error::Input(format!(
                            "attention row ({layer},{head},{query}) attends to future keys"
                        )));
                    }
                    let sum: f64 = row[..=query].iter().sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                        return Err(Error::Input(format!(
                            "attention row ({layer},{head},{query}) sums to {sum}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_rows_are_valid() {
        let t = AttentionTensor::uniform_causal(2, 3, 5);
        t.validate().unwrap();
        assert_eq!(t.get(1, 2, 3, 0), 0.25);
        assert_eq!(t.get(1, 2, 3, 4), 0.0);
    }

    #[test]
    fn future_attention_rejected() {
        let err = AttentionTensor::from_rows(1, 1, 2, |_, _, q| vec![1.0 / (q + 1) as f64; q + 1]);
        assert!(err.is_ok());
        let mut t = AttentionTensor::uniform_causal(1, 1, 2);
        t.row_mut(0, 0, 0)[1] = 0.5;
        assert!(t.validate().is_err());
    }

    #[test]
    fn unnormalized_row_rejected() {
        let res = AttentionTensor::from_rows(1, 1, 2, |_, _, q| vec![0.4; q + 1]);
        assert!(res.is_err());
        let res = AttentionTensor::from_rows(1, 1, 2, |_, _, q| vec![0.4; q]);
        assert!(res.is_err());
    }
}
