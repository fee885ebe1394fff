//! The decoding loop.
//!
//! Each step runs three forward passes over the current prefix:
//!
//! 1. unmasked, giving the reference distribution and the scoring attention;
//! 2. with the focus mask, hiding unselected image tokens in deep layers;
//! 3. with the text-only mask, hiding every image token from the first layer.
//!
//! The focused and text-only logits are combined as `(1 + alpha) * focused -
//! alpha * text_only`, turned into a distribution, truncated to the tokens
//! whose reference probability is at least `beta` times the reference maximum,
//! and sampled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, ForwardBackend, LogitVector, TokenId, TokenSequence};
use crate::selection::{self, SelectionConfig, SelectionResult};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampling {
    Greedy,
    Categorical { temperature: f64 },
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling::Categorical { temperature: 1.0 }
    }
}

/// Which distribution the plausibility constraint is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintSource {
    /// The unmasked pass, conditioned on every image token.
    #[default]
    FullImage,
    /// The focus-masked pass.
    SelectedImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub alpha: f64,
    pub beta: f64,
    pub max_new_tokens: usize,
    pub sampling: Sampling,
    pub constraint_source: ConstraintSource,
    pub rng_seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            max_new_tokens: 32,
            sampling: Sampling::default(),
            constraint_source: ConstraintSource::default(),
            rng_seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!(
                "beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        if let Sampling::Categorical { temperature } = self.sampling {
            if !(temperature.is_finite() && temperature > 0.0) {
                return Err(Error::Config(format!(
                    "temperature must be finite and positive, got {temperature}"
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Step operations
// ---------------------------------------------------------------------------

/// `(1 + alpha) * cond - alpha * uncond`, evaluated as `cond + alpha * (cond - uncond)`
/// so that `alpha = 0` and `cond == uncond` return `cond` bit for bit.
pub fn contrastive_logits(
    cond: &LogitVector,
    uncond: &LogitVector,
    alpha: f64,
) -> Result<LogitVector> {
    if cond.len() != uncond.len() {
        return Err(Error::Input(format!(
            "logit lengths differ: {} vs {}",
            cond.len(),
            uncond.len()
        )));
    }
    LogitVector::new(
        cond.as_slice()
            .iter()
            .zip(uncond.as_slice())
            .map(|(&c, &u)| c + alpha * (c - u))
            .collect(),
    )
}

/// Tokens whose reference probability is at least `beta` times the maximum, ascending.
pub fn plausibility_set(p_ref: &[f64], beta: f64) -> Vec<TokenId> {
    let max = p_ref.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = beta * max;
    p_ref
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold)
        .map(|(i, _)| i as TokenId)
        .collect()
}

/// Inverse-CDF draw from unnormalized nonnegative `weights` with `u` in `[0, 1)`.
fn draw_index(weights: &[f64], u: f64) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = None;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last_positive = Some(i);
        if target < acc {
            return Some(i);
        }
    }
    last_positive
}

/// Samples from `calibrated` restricted to `allowed`, renormalizing over the allowed set.
///
/// Greedy picks the allowed token with the highest calibrated probability
/// (lowest id on ties). Categorical sampling always consumes exactly one draw
/// from `rng`, so the stream stays aligned with the step index.
pub fn constrained_sample<R: Rng + ?Sized>(
    calibrated: &[f64],
    allowed: &[TokenId],
    sampling: Sampling,
    rng: &mut R,
) -> Result<TokenId> {
    if allowed.is_empty() {
        return Err(Error::Internal("plausibility set is empty".into()));
    }
    if let Some(&bad) = allowed.iter().find(|&&y| y as usize >= calibrated.len()) {
        return Err(Error::Internal(format!(
            "token {bad} outside the vocabulary"
        )));
    }
    let greedy = || {
        let probs: Vec<f64> = allowed.iter().map(|&y| calibrated[y as usize]).collect();
        allowed[argmax(&probs).expect("allowed set is nonempty")]
    };
    match sampling {
        Sampling::Greedy => Ok(greedy()),
        Sampling::Categorical { temperature } => {
            let u: f64 = rng.random();
            let weights: Vec<f64> = allowed
                .iter()
                .map(|&y| {
                    let p = calibrated[y as usize];
                    if temperature == 1.0 {
                        p
                    } else {
                        p.powf(1.0 / temperature)
                    }
                })
                .collect();
            // all allowed mass underflowed: fall back to the most probable allowed token
            Ok(draw_index(&weights, u).map_or_else(greedy, |i| allowed[i]))
        }
    }
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Everything computed for one generated token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeStepTrace {
    pub step: usize,
    /// Position of the query that predicts this token.
    pub query_position: usize,
    pub logits_full: LogitVector,
    pub logits_selected: LogitVector,
    pub logits_text_only: LogitVector,
    pub calibrated: Vec<f64>,
    pub plausibility_set: Vec<TokenId>,
    pub chosen: TokenId,
    pub selection: SelectionResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<TokenId>,
    pub traces: Vec<DecodeStepTrace>,
    /// Prompt plus generated tokens.
    pub sequence: TokenSequence,
    pub stopped_at_eos: bool,
}

/// Runs the full pipeline until EOS or `max_new_tokens`.
pub fn generate<B: ForwardBackend + ?Sized>(
    backend: &B,
    prompt: &TokenSequence,
    sel_cfg: &SelectionConfig,
    dec_cfg: &DecodeConfig,
) -> Result<Generation> {
    let dims = backend.dims();
    sel_cfg.validate(dims.num_layers)?;
    dec_cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(dec_cfg.rng_seed);
    let mut seq = prompt.clone();
    let text_mask = selection::build_text_only_mask(seq.spans())?;
    let mut fixed: Option<SelectionResult> = None;
    let mut tokens = Vec::new();
    let mut traces = Vec::new();
    let mut stopped_at_eos = false;

    for step in 0..dec_cfg.max_new_tokens {
        let query = seq.len() - 1;
        let full = backend.forward(&seq, None)?;
        let sel = match &fixed {
            Some(s) => s.clone(),
            None => {
                let s = selection::select(&full.attention, seq.spans(), query, sel_cfg)?;
                if !sel_cfg.reselect_each_step {
                    fixed = Some(s.clone());
                }
                s
            }
        };
        let focused = backend.forward(&seq, Some(&sel.mask))?;
        let text_only = backend.forward(&seq, Some(&text_mask))?;

        let calibrated =
            contrastive_logits(&focused.logits, &text_only.logits, dec_cfg.alpha)?.softmax();
        let p_ref = match dec_cfg.constraint_source {
            ConstraintSource::FullImage => full.logits.softmax(),
            ConstraintSource::SelectedImage => focused.logits.softmax(),
        };
        let allowed = plausibility_set(&p_ref, dec_cfg.beta);
        let chosen = constrained_sample(&calibrated, &allowed, dec_cfg.sampling, &mut rng)?;

        traces.push(DecodeStepTrace {
            step,
            query_position: query,
            logits_full: full.logits,
            logits_selected: focused.logits,
            logits_text_only: text_only.logits,
            calibrated,
            plausibility_set: allowed,
            chosen,
            selection: sel,
        });
        tokens.push(chosen);
        seq.push(chosen);
        if chosen == dims.eos_id {
            stopped_at_eos = true;
            break;
        }
    }
    Ok(Generation {
        tokens,
        traces,
        sequence: seq,
        stopped_at_eos,
    })
}

/// Plain decoding from the unmasked model: the most probable token, or a
/// categorical draw from the tempered softmax. Reference for the neutral
/// setting; it shares the sampler with [`generate`] over the full vocabulary.
pub fn vanilla_generate<B: ForwardBackend + ?Sized>(
    backend: &B,
    prompt: &TokenSequence,
    max_new_tokens: usize,
    sampling: Sampling,
    rng_seed: u64,
) -> Result<Generation> {
    let dims = backend.dims();
    let vocab: Vec<TokenId> = (0..dims.vocab_size as TokenId).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut seq = prompt.clone();
    let mut tokens = Vec::new();
    let mut stopped_at_eos = false;
    for _ in 0..max_new_tokens {
        let probs = backend.forward(&seq, None)?.logits.softmax();
        let next = constrained_sample(&probs, &vocab, sampling, &mut rng)?;
        tokens.push(next);
        seq.push(next);
        if next == dims.eos_id {
            stopped_at_eos = true;
            break;
        }
    }
    Ok(Generation {
        tokens,
        traces: Vec::new(),
        sequence: seq,
        stopped_at_eos,
    })
}

// ---------------------------------------------------------------------------
// Trace serialization
// ---------------------------------------------------------------------------

/// One JSONL line of a decode trace. Logit vectors are `(token, value)` pairs
/// sorted by value, optionally cut to the top entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub query_position: usize,
    pub chosen: TokenId,
    pub plausibility_set: Vec<TokenId>,
    pub psi: Vec<f64>,
    pub selected: Vec<usize>,
    pub logits_full: Vec<(TokenId, f64)>,
    pub logits_selected: Vec<(TokenId, f64)>,
    pub logits_text_only: Vec<(TokenId, f64)>,
    pub calibrated: Vec<(TokenId, f64)>,
}

fn ranked(values: &[f64], top: Option<usize>) -> Vec<(TokenId, f64)> {
    let mut pairs: Vec<(TokenId, f64)> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| (i as TokenId, v))
        .collect();
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if let Some(k) = top {
        pairs.truncate(k);
    }
    pairs
}

impl DecodeStepTrace {
    pub fn to_record(&self, top: Option<usize>) -> TraceRecord {
        TraceRecord {
            step: self.step,
            query_position: self.query_position,
            chosen: self.chosen,
            plausibility_set: self.plausibility_set.clone(),
            psi: self.selection.scores.clone(),
            selected: self.selection.selected.clone(),
            logits_full: ranked(self.logits_full.as_slice(), top),
            logits_selected: ranked(self.logits_selected.as_slice(), top),
            logits_text_only: ranked(self.logits_text_only.as_slice(), top),
            calibrated: ranked(&self.calibrated, top),
        }
    }
}
