//! Image-token scoring, top-K selection and the two decoding masks.
//!
//! Scores are the head-averaged attention the current query pays to each
//! image token at the scoring layer. The top-K tokens stay visible; the rest
//! are hidden from `mask_from_layer` onward (focus mask). The text-only mask
//! hides every image token from the first layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttentionMask, AttentionTensor, SpanMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Fraction of image tokens kept, in `(0, 1]`.
    pub keep_ratio: f64,
    /// Zero-based layer whose attention scores the image tokens.
    pub score_layer: usize,
    /// First zero-based layer at which unselected image tokens are hidden.
    pub mask_from_layer: usize,
    /// Re-score at every step, or score once at the last prompt position.
    pub reselect_each_step: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            keep_ratio: 0.75,
            score_layer: 1,
            mask_from_layer: 2,
            reselect_each_step: true,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if !(self.keep_ratio > 0.0 && self.keep_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "keep_ratio must lie in (0, 1], got {}",
                self.keep_ratio
            )));
        }
        if self.score_layer >= self.mask_from_layer || self.mask_from_layer > num_layers {
            return Err(Error::Config(format!(
                "need score_layer < mask_from_layer <= {num_layers}, got {} and {}",
                self.score_layer, self.mask_from_layer
            )));
        }
        Ok(())
    }

    /// `ceil(keep_ratio * n)`, at least 1.
    pub fn num_kept(&self, num_image_tokens: usize) -> usize {
        // shave off float noise so that e.g. 0.7 * 10 stays 7
        let exact = self.keep_ratio * num_image_tokens as f64;
        let k = (exact - 1e-9).ceil() as usize;
        k.clamp(1, num_image_tokens)
    }
}

/// Scores, kept indices and focus mask for one decoding step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// One score per image token, in image order.
    pub scores: Vec<f64>,
    /// Kept image-token indices (relative to the image span), ascending.
    pub selected: Vec<usize>,
    pub mask: AttentionMask,
}

/// Head-averaged attention from query `t` to each image token at `cfg.score_layer`.
pub fn image_token_scores(
    att: &AttentionTensor,
    spans: &SpanMap,
    t: usize,
    cfg: &SelectionConfig,
) -> Result<Vec<f64>> {
    if spans.img.is_empty() {
        return Err(Error::Input("image span is empty".into()));
    }
    if cfg.score_layer >= att.num_layers() {
        return Err(Error::Input(format!(
            "score layer {} outside {} layers",
            cfg.score_layer,
            att.num_layers()
        )));
    }
    if t >= att.seq_len() || spans.img.end > att.seq_len() {
        return Err(Error::Input(format!(
            "query {t} or image span {:?} outside sequence of length {}",
            spans.img,
            att.seq_len()
        )));
    }
    let heads = att.num_heads();
    let mut scores = vec![0.0; spans.img.len()];
    for head in 0..heads {
        let row = att.row(cfg.score_layer, head, t);
        for (s, &w) in scores.iter_mut().zip(&row[spans.img.clone()]) {
            *s += w;
        }
    }
    for s in &mut scores {
        *s /= heads as f64;
    }
    Ok(scores)
}

/// Indices of the `k` largest scores, ties to the lower index, returned ascending.
pub fn select_top_k(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::Input(format!(
            "cannot select {k} of {} scores",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept = order[..k].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

/// Hides every image token not in `selected` from all queries at layers
/// `>= cfg.mask_from_layer`.
pub fn build_focus_mask(
    selected: &[usize],
    spans: &SpanMap,
    cfg: &SelectionConfig,
) -> Result<AttentionMask> {
    let n = spans.img.len();
    if let Some(&bad) = selected.iter().find(|&&j| j >= n) {
        return Err(Error::Input(format!(
            "selected index {bad} outside image span of {n} tokens"
        )));
    }
    let mut keep = vec![false; n];
    for &j in selected {
        keep[j] = true;
    }
    let mut mask = AttentionMask::new(cfg.mask_from_layer);
    for (j, _) in keep.iter().enumerate().filter(|(_, &k)| !k) {
        mask.block_key(spans.img.start + j);
    }
    Ok(mask)
}

/// Hides every image token from every query at every layer.
pub fn build_text_only_mask(spans: &SpanMap) -> Result<AttentionMask> {
    if spans.img.is_empty() {
        return Err(Error::Input("image span is empty".into()));
    }
    let mut mask = AttentionMask::new(0);
    for key in spans.img.clone() {
        mask.block_key(key);
    }
    Ok(mask)
}

/// Scores the image tokens for query `t` and builds the focus mask.
pub fn select(
    att: &AttentionTensor,
    spans: &SpanMap,
    t: usize,
    cfg: &SelectionConfig,
) -> Result<SelectionResult> {
    let scores = image_token_scores(att, spans, t, cfg)?;
    let k = cfg.num_kept(scores.len());
    let selected = select_top_k(&scores, k)?;
    let mask = build_focus_mask(&selected, spans, cfg)?;
    Ok(SelectionResult {
        scores,
        selected,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn top_k_examples() {
        assert_eq!(select_top_k(&[0.1, 0.4, 0.2, 0.3], 2).unwrap(), vec![1, 3]);
        assert_eq!(
            select_top_k(&[0.1, 0.4, 0.2, 0.3], 4).unwrap(),
            vec![0, 1, 2, 3]
        );
        assert_eq!(select_top_k(&[0.5; 4], 2).unwrap(), vec![0, 1]);
        assert!(select_top_k(&[0.5; 4], 0).is_err());
        assert!(select_top_k(&[0.5; 4], 5).is_err());
    }

    #[test]
    fn kept_count_is_ceiling() {
        let cfg = |r| SelectionConfig {
            keep_ratio: r,
            ..Default::default()
        };
        assert_eq!(cfg(0.75).num_kept(576), 432);
        assert_eq!(cfg(0.5).num_kept(576), 288);
        assert_eq!(cfg(0.125).num_kept(576), 72);
        assert_eq!(cfg(0.75).num_kept(32), 24);
        assert_eq!(cfg(0.7).num_kept(10), 7);
        assert_eq!(cfg(0.75).num_kept(5), 4);
        assert_eq!(cfg(0.01).num_kept(16), 1);
        assert_eq!(cfg(1.0).num_kept(16), 16);
    }

    #[test]
    fn config_validation() {
        let ok = SelectionConfig::default();
        ok.validate(4).unwrap();
        let mut bad = ok.clone();
        bad.keep_ratio = 0.0;
        assert!(bad.validate(4).is_err());
        let mut bad = ok.clone();
        bad.mask_from_layer = 1;
        assert!(bad.validate(4).is_err());
        let mut bad = ok;
        bad.mask_from_layer = 5;
        assert!(bad.validate(4).is_err());
    }

    #[test]
    fn scores_average_heads() {
        // four heads put 0.1, 0.2, 0.3, 0.4 on the single image token at layer 1
        let att = AttentionTensor::from_rows(3, 4, 3, |layer, head, q| {
            if layer == 1 && q == 2 {
                let w = 0.1 * (head + 1) as f64;
                vec![1.0 - w, w, 0.0]
            } else {
                vec![1.0 / (q + 1) as f64; q + 1]
            }
        })
        .unwrap();
        let spans = SpanMap::from_lengths(1, 1, 1);
        let psi = image_token_scores(&att, &spans, 2, &SelectionConfig::default()).unwrap();
        assert_eq!(psi.len(), 1);
        assert!((psi[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn single_head_scores_are_the_row() {
        let att = AttentionTensor::from_rows(3, 1, 5, |_, _, q| {
            if q == 4 {
                vec![0.1, 0.2, 0.3, 0.15, 0.25]
            } else {
                vec![1.0 / (q + 1) as f64; q + 1]
            }
        })
        .unwrap();
        let spans = SpanMap::from_lengths(1, 3, 1);
        let psi = image_token_scores(&att, &spans, 4, &SelectionConfig::default()).unwrap();
        assert_eq!(psi, vec![0.2, 0.3, 0.15]);
    }

    #[test]
    fn focus_mask_blocks_complement() {
        let spans = SpanMap::from_lengths(2, 4, 1);
        let mask = build_focus_mask(&[0, 2], &spans, &SelectionConfig::default()).unwrap();
        assert_eq!(mask.active_from_layer(), 2);
        assert_eq!(
            mask.blocked_keys().into_iter().collect::<Vec<_>>(),
            vec![3, 5]
        );
        let all = build_focus_mask(&[0, 1, 2, 3], &spans, &SelectionConfig::default()).unwrap();
        assert!(all.is_empty());
        assert!(build_focus_mask(&[4], &spans, &SelectionConfig::default()).is_err());
    }

    #[test]
    fn text_only_mask_blocks_all_image_keys() {
        let spans = SpanMap::from_lengths(2, 3, 1);
        let mask = build_text_only_mask(&spans).unwrap();
        assert_eq!(mask.active_from_layer(), 0);
        assert_eq!(
            mask.blocked_keys().into_iter().collect::<Vec<_>>(),
            vec![2, 3, 4]
        );
    }

    fn oracle(scores: &[f64], k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        // stable sort keeps lower indices first among equal scores
        idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
        let mut out = idx[..k].to_vec();
        out.sort();
        out
    }

    proptest! {
        #[test]
        fn matches_stable_sort_oracle(
            scores in prop::collection::vec((0u8..6).prop_map(|v| v as f64 / 5.0), 1..24),
            k_seed in any::<usize>(),
        ) {
            let k = k_seed % scores.len() + 1;
            prop_assert_eq!(select_top_k(&scores, k).unwrap(), oracle(&scores, k));
        }

        #[test]
        fn kept_scores_dominate(scores in prop::collection::vec(0.0f64..1.0, 1..32), k_seed in any::<usize>()) {
            let k = k_seed % scores.len() + 1;
            let kept = select_top_k(&scores, k).unwrap();
            let min_in = kept.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
            let max_out = (0..scores.len())
                .filter(|i| !kept.contains(i))
                .map(|i| scores[i])
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(min_in >= max_out);
            prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn scale_invariant(scores in prop::collection::vec(0.0f64..1.0, 1..32), k_seed in any::<usize>(), c in 0.01f64..100.0) {
            let k = k_seed % scores.len() + 1;
            let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
            prop_assert_eq!(select_top_k(&scores, k).unwrap(), select_top_k(&scaled, k).unwrap());
        }

        #[test]
        fn nested_as_k_grows(scores in prop::collection::hash_set(0u32..1_000_000, 2..32)) {
            let scores: Vec<f64> = scores.into_iter().map(|s| s as f64).collect();
            for k in 1..scores.len() {
                let small = select_top_k(&scores, k).unwrap();
                let big = select_top_k(&scores, k + 1).unwrap();
                prop_assert!(small.iter().all(|i| big.contains(i)));
            }
        }
    }
}
