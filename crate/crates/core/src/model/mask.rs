use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which queries a blocked key is hidden from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuerySpan {
    All,
    Range { start: usize, end: usize },
}

impl QuerySpan {
    pub fn contains(&self, query: usize) -> bool {
        match *self {
            QuerySpan::All => true,
            QuerySpan::Range { start, end } => (start..end).contains(&query),
        }
    }
}

/// One hidden (query span, key) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockedKey {
    pub queries: QuerySpan,
    pub key: usize,
}

/// Pre-softmax additive mask: blocked pairs get `-inf` at every layer
/// `>= active_from_layer`, which yields exactly zero weight after softmax.
///
/// Masking hides keys; it never renumbers positions.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AttentionMask {
    blocked: BTreeSet<BlockedKey>,
    active_from_layer: usize,
}

impl AttentionMask {
    pub fn new(active_from_layer: usize) -> Self {
        Self {
            blocked: BTreeSet::new(),
            active_from_layer,
        }
    }

    pub fn block(&mut self, queries: QuerySpan, key: usize) {
        self.blocked.insert(BlockedKey { queries, key });
    }

    /// Hides `key` from every query.
    pub fn block_key(&mut self, key: usize) {
        self.block(QuerySpan::All, key);
    }

    pub fn active_from_layer(&self) -> usize {
        self.active_from_layer
    }

    pub fn blocked(&self) -> impl Iterator<Item = &BlockedKey> {
        self.blocked.iter()
    }

    /// Distinct key positions that are blocked for at least one query.
    pub fn blocked_keys(&self) -> BTreeSet<usize> {
        self.blocked.iter().map(|b| b.key).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.blocked.is_empty()
    }

    pub fn is_blocked(&self, layer: usize, query: usize, key: usize) -> bool {
        layer >= self.active_from_layer
            && self
                .blocked
                .iter()
                .any(|b| b.key == key && b.queries.contains(query))
    }

    /// `[query][key]` table of pairs blocked at active layers, for a sequence of `seq_len`.
    pub(crate) fn dense(&self, seq_len: usize) -> Vec<bool> {
        let mut table = vec![false; seq_len * seq_len];
        for b in &self.blocked {
            for query in 0..seq_len {
                if b.queries.contains(query) {
                    table[query * seq_len + b.key] = true;
                }
            }
        }
        table
    }

    pub fn validate(&self, seq_len: usize, num_layers: usize) -> Result<()> {
        if self.active_from_layer > num_layers {
            return Err(Error::Input(format!(
                "mask active_from_layer {} exceeds layer count {}",
                self.active_from_layer, num_layers
            )));
        }
        if let Some(b) = self.blocked.iter().find(|b| b.key >= seq_len) {
            return Err(Error::Input(format!(
                "mask blocks key {} but the sequence has {} positions",
                b.key, seq_len
            )));
        }
        Ok(())
    }

    /// Canonical text form used to key scripted forward passes.
    pub fn signature(&self) -> String {
        let mut sig = format!("from{}", self.active_from_layer);
        for b in &self.blocked {
            match b.queries {
                QuerySpan::All => write!(sig, "|*:{}", b.key),
                QuerySpan::Range { start, end } => write!(sig, "|{start}-{end}:{}", b.key),
            }
            .expect("writing to a String cannot fail");
        }
        sig
    }
}

/// Signature of an optional mask; `"none"` for the unmasked pass.
pub fn mask_signature(mask: Option<&AttentionMask>) -> String {
    mask.map_or_else(|| "none".to_string(), AttentionMask::signature)
}
