//! Attention allocation by token type.
//!
//! For a query position, each attention row is split into the mass that lands
//! on the system prompt, the image, the question and earlier outputs. Averaging
//! those shares over generated tokens gives the overall and per-layer
//! allocation statistics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttentionTensor, SpanMap, TokenType};

/// Attention shares of one row, one per token type.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TypeShares {
    pub sys: f64,
    pub img: f64,
    pub que: f64,
    pub out: f64,
}

impl TypeShares {
    pub fn get(&self, ty: TokenType) -> f64 {
        match ty {
            TokenType::Sys => self.sys,
            TokenType::Img => self.img,
            TokenType::Que => self.que,
            TokenType::Out => self.out,
        }
    }

    fn get_mut(&mut self, ty: TokenType) -> &mut f64 {
        match ty {
            TokenType::Sys => &mut self.sys,
            TokenType::Img => &mut self.img,
            TokenType::Que => &mut self.que,
            TokenType::Out => &mut self.out,
        }
    }

    pub fn total(&self) -> f64 {
        self.sys + self.img + self.que + self.out
    }

    fn add(&mut self, other: &TypeShares) {
        for ty in TokenType::ALL {
            *self.get_mut(ty) += other.get(ty);
        }
    }

    fn scaled(mut self, factor: f64) -> Self {
        for ty in TokenType::ALL {
            *self.get_mut(ty) *= factor;
        }
        self
    }
}

/// Allocation of one `(layer, head, query)` attention row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationRecord {
    pub layer: usize,
    pub head: usize,
    pub query: usize,
    pub shares: TypeShares,
}

/// Mean allocation over generated-token queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationSummary {
    /// Mean over every query, head and layer.
    pub gamma: TypeShares,
    /// Mean over queries and heads at each fixed layer.
    pub gamma_by_layer: Vec<TypeShares>,
    /// Generated tokens covered; queries used are `N - 1`.
    pub num_generated: usize,
    pub num_records: usize,
}

/// Splits every `(layer, head)` row of query `t` across the four spans.
pub fn partition_attention(
    att: &AttentionTensor,
    spans: &SpanMap,
    t: usize,
) -> Result<Vec<AllocationRecord>> {
    if t >= att.seq_len() {
        return Err(Error::Input(format!(
            "query {t} outside sequence of length {}",
            att.seq_len()
        )));
    }
    spans.validate(att.seq_len())?;
    let mut records = Vec::with_capacity(att.num_layers() * att.num_heads());
    for layer in 0..att.num_layers() {
        for head in 0..att.num_heads() {
            let row = att.row(layer, head, t);
            let mut shares = TypeShares::default();
            for ty in TokenType::ALL {
                let span = spans.span(ty);
                *shares.get_mut(ty) = row[span.clone()].iter().sum();
            }
            records.push(AllocationRecord {
                layer,
                head,
                query: t,
                shares,
            });
        }
    }
    Ok(records)
}

/// Averages records into overall and per-layer shares.
///
/// `N` is taken as the number of distinct queries plus one: the first
/// generated token has no earlier output and is never part of the records.
pub fn average_allocation(records: &[AllocationRecord]) -> Result<AllocationSummary> {
    if records.is_empty() {
        return Err(Error::InsufficientData(
            "at least two generated tokens are needed for an allocation average".into(),
        ));
    }
    let num_layers = records.iter().map(|r| r.layer).max().unwrap_or(0) + 1;
    let mut overall = TypeShares::default();
    let mut by_layer = vec![TypeShares::default(); num_layers];
    let mut counts = vec![0usize; num_layers];
    for r in records {
        overall.add(&r.shares);
        by_layer[r.layer].add(&r.shares);
        counts[r.layer] += 1;
    }
    let queries: BTreeSet<usize> = records.iter().map(|r| r.query).collect();
    Ok(AllocationSummary {
        gamma: overall.scaled(1.0 / records.len() as f64),
        gamma_by_layer: by_layer
            .into_iter()
            .zip(counts)
            .map(|(s, c)| if c == 0 { s } else { s.scaled(1.0 / c as f64) })
            .collect(),
        num_generated: queries.len() + 1,
        num_records: records.len(),
    })
}

/// Query positions that predict generated tokens `1..N`: the positions of
/// outputs `0..N-1`. Prompt positions are never included.
pub fn generated_queries(spans: &SpanMap, num_generated: usize) -> Result<Vec<usize>> {
    if num_generated < 2 {
        return Err(Error::InsufficientData(format!(
            "{num_generated} generated token(s); at least 2 are required"
        )));
    }
    if spans.out.len() < num_generated - 1 {
        return Err(Error::Input(format!(
            "output span holds {} tokens, fewer than {}",
            spans.out.len(),
            num_generated - 1
        )));
    }
    Ok((0..num_generated - 1)
        .map(|i| spans.out.start + i)
        .collect())
}

/// Partition + average over the generated tokens of a finished sequence.
///
/// `att` must come from a forward pass over the full sequence; causal rows at
/// earlier positions are identical to the rows seen during generation.
pub fn summarize_generation(
    att: &AttentionTensor,
    spans: &SpanMap,
    num_generated: usize,
) -> Result<AllocationSummary> {
    let mut records = Vec::new();
    for t in generated_queries(spans, num_generated)? {
        records.extend(partition_attention(att, spans, t)?);
    }
    average_allocation(&records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(layer: usize, head: usize, query: usize, img: f64) -> AllocationRecord {
        AllocationRecord {
            layer,
            head,
            query,
            shares: TypeShares {
                sys: 1.0 - img,
                img,
                que: 0.0,
                out: 0.0,
            },
        }
    }

    #[test]
    fn scripted_row_hand_sum() {
        let row = [0.1, 0.2, 0.3, 0.4];
        let att = AttentionTensor::from_rows(1, 1, 4, |_, _, q| {
            if q == 3 {
                row.to_vec()
            } else {
                vec![1.0 / (q + 1) as f64; q + 1]
            }
        })
        .unwrap();
        let spans = SpanMap::from_lengths(1, 2, 1);
        let rec = partition_attention(&att, &spans, 3).unwrap();
        assert_eq!(rec.len(), 1);
        let s = rec[0].shares;
        assert!((s.sys - 0.1).abs() < 1e-12);
        assert!((s.img - 0.5).abs() < 1e-12);
        assert!((s.que - 0.4).abs() < 1e-12);
        assert_eq!(s.out, 0.0);
    }

    #[test]
    fn point_mass_on_system_prompt() {
        let att = AttentionTensor::from_rows(2, 2, 6, |_, _, q| {
            let mut r = vec![0.0; q + 1];
            r[0] = 1.0;
            r
        })
        .unwrap();
        let spans = SpanMap {
            sys: 0..1,
            img: 1..3,
            que: 3..4,
            out: 4..6,
        };
        for rec in partition_attention(&att, &spans, 5).unwrap() {
            assert_eq!(rec.shares.sys, 1.0);
            assert_eq!(rec.shares.total(), 1.0);
        }
    }

    #[test]
    fn uniform_rows_give_span_fractions() {
        // spans of sizes (2, 4, 2, 3), query t = 10 sees 11 keys
        let att = AttentionTensor::uniform_causal(1, 1, 11);
        let spans = SpanMap {
            sys: 0..2,
            img: 2..6,
            que: 6..8,
            out: 8..11,
        };
        let s = partition_attention(&att, &spans, 10).unwrap()[0].shares;
        assert!((s.sys - 2.0 / 11.0).abs() < 1e-12);
        assert!((s.img - 4.0 / 11.0).abs() < 1e-12);
        assert!((s.que - 2.0 / 11.0).abs() < 1e-12);
        assert!((s.out - 3.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn query_out_of_range() {
        let att = AttentionTensor::uniform_causal(1, 1, 3);
        let spans = SpanMap::from_lengths(1, 1, 1);
        assert!(matches!(
            partition_attention(&att, &spans, 3),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn two_query_mean() {
        let s = average_allocation(&[record(0, 0, 5, 0.4), record(0, 0, 6, 0.6)]).unwrap();
        assert!((s.gamma.img - 0.5).abs() < 1e-12);
        assert_eq!(s.num_generated, 3);
    }

    #[test]
    fn layer_head_mean() {
        let recs = [
            record(0, 0, 9, 0.1),
            record(0, 1, 9, 0.2),
            record(1, 0, 9, 0.3),
            record(1, 1, 9, 0.4),
        ];
        let s = average_allocation(&recs).unwrap();
        assert!((s.gamma.img - 0.25).abs() < 1e-12);
        assert!((s.gamma_by_layer[0].img - 0.15).abs() < 1e-12);
        assert!((s.gamma_by_layer[1].img - 0.35).abs() < 1e-12);
        assert!((s.gamma.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_records_average_to_themselves() {
        let recs: Vec<_> = (0..7).map(|q| record(q % 2, 0, q, 0.3)).collect();
        let s = average_allocation(&recs).unwrap();
        assert!((s.gamma.img - 0.3).abs() < 1e-15);
        assert!((s.gamma.sys - 0.7).abs() < 1e-15);
    }

    #[test]
    fn first_generated_token_excluded() {
        let spans = SpanMap {
            sys: 0..1,
            img: 1..3,
            que: 3..4,
            out: 4..8,
        };
        assert_eq!(generated_queries(&spans, 4).unwrap(), vec![4, 5, 6]);
        assert!(matches!(
            generated_queries(&spans, 1),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            average_allocation(&[]),
            Err(Error::InsufficientData(_))
        ));
    }
}
