use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    AttentionMask, AttentionTensor, ForwardBackend, ForwardResult, LogitVector, ModelConfig,
    ModelDims, TokenSequence,
};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
struct Linear {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `[in_dim][out_dim]`.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Linear {
    fn init(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> Self {
        let normal = Normal::new(0.0, 1.0 / (in_dim as f64).sqrt()).expect("positive std");
        Self {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; out_dim],
        }
    }

    /// `x` is `[rows][in_dim]`.
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let rows = x.len() / self.in_dim;
        let mut out = Vec::with_capacity(rows * self.out_dim);
        for r in 0..rows {
            let xr = &x[r * self.in_dim..(r + 1) * self.in_dim];
            let mut acc = self.bias.clone();
            for (i, &xi) in xr.iter().enumerate() {
                let w = &self.weight[i * self.out_dim..(i + 1) * self.out_dim];
                for (a, &wij) in acc.iter_mut().zip(w) {
                    *a += xi * wij;
                }
            }
            out.extend_from_slice(&acc);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerNorm {
    gain: Vec<f64>,
    bias: Vec<f64>,
}

impl LayerNorm {
    fn new(dim: usize) -> Self {
        Self {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let dim = self.gain.len();
        let mut out = Vec::with_capacity(x.len());
        for row in x.chunks_exact(dim) {
            let mean = row.iter().sum::<f64>() / dim as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            out.extend(
                row.iter()
                    .zip(self.gain.iter().zip(&self.bias))
                    .map(|(v, (g, b))| (v - mean) * inv * g + b),
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    ln_attn: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    proj: Linear,
    ln_mlp: LayerNorm,
    fc_in: Linear,
    fc_out: Linear,
}

fn gelu(x: f64) -> f64 {
    const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x)).tanh())
}

fn sinusoidal_position(pos: usize, dim: usize) -> impl Iterator<Item = f64> {
    (0..dim).map(move |i| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10_000f64.powf(2.0 * pair / dim as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Pre-norm decoder with learned token embeddings and sinusoidal positions.
///
/// Image tokens are ordinary vocabulary ids; there is no vision encoder.
/// Weights are immutable after [`Model::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    embedding: Vec<f64>,
    blocks: Vec<Block>,
    ln_final: LayerNorm,
    unembed: Linear,
}

impl Model {
    /// Draws every weight from a ChaCha stream seeded with `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.model_dim;
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let embedding = (0..config.vocab_size * d)
            .map(|_| normal.sample(&mut rng))
            .collect();
        let blocks = (0..config.num_layers)
            .map(|_| Block {
                ln_attn: LayerNorm::new(d),
                query: Linear::init(&mut rng, d, d),
                key: Linear::init(&mut rng, d, d),
                value: Linear::init(&mut rng, d, d),
                proj: Linear::init(&mut rng, d, d),
                ln_mlp: LayerNorm::new(d),
                fc_in: Linear::init(&mut rng, d, 4 * d),
                fc_out: Linear::init(&mut rng, 4 * d, d),
            })
            .collect();
        let unembed = Linear::init(&mut rng, d, config.vocab_size);
        Ok(Self {
            config,
            embedding,
            blocks,
            ln_final: LayerNorm::new(d),
            unembed,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_input(&self, seq: &TokenSequence, mask: Option<&AttentionMask>) -> Result<()> {
        let vocab = self.config.vocab_size;
        if let Some((pos, id)) = seq
            .token_ids()
            .iter()
            .enumerate()
            .find(|(_, &id)| id as usize >= vocab)
        {
            return Err(Error::Input(format!(
                "token id {id} at position {pos} outside vocabulary of size {vocab}"
            )));
        }
        seq.spans().validate(seq.len())?;
        if seq.spans().img.len() != self.config.num_image_tokens {
            return Err(Error::Input(format!(
                "image span has {} tokens, model expects {}",
                seq.spans().img.len(),
                self.config.num_image_tokens
            )));
        }
        if let Some(mask) = mask {
            mask.validate(seq.len(), self.config.num_layers)?;
        }
        Ok(())
    }
}

impl ForwardBackend for Model {
    fn dims(&self) -> ModelDims {
        self.config.dims()
    }

    fn forward(&self, seq: &TokenSequence, mask: Option<&AttentionMask>) -> Result<ForwardResult> {
        self.check_input(seq, mask)?;
        let cfg = &self.config;
        let d = cfg.model_dim;
        let head_dim = cfg.head_dim();
        let scale = 1.0 / (head_dim as f64).sqrt();
        let len = seq.len();

        let mut x = Vec::with_capacity(len * d);
        for (pos, &id) in seq.token_ids().iter().enumerate() {
            let emb = &self.embedding[id as usize * d..(id as usize + 1) * d];
            x.extend(
                emb.iter()
                    .zip(sinusoidal_position(pos, d))
                    .map(|(e, p)| e + p),
            );
        }

        let blocked = mask.map(|m| (m.active_from_layer(), m.dense(len)));
        let mut attention = AttentionTensor::zeros(cfg.num_layers, cfg.num_heads, len);
        let mut scores = vec![0.0; len];

        for (layer, block) in self.blocks.iter().enumerate() {
            let h = block.ln_attn.apply(&x);
            let q = block.query.apply(&h);
            let k = block.key.apply(&h);
            let v = block.value.apply(&h);
            let table = blocked
                .as_ref()
                .filter(|(from, _)| layer >= *from)
                .map(|(_, table)| table);

            let mut ctx = vec![0.0; len * d];
            for head in 0..cfg.num_heads {
                let hs = head * head_dim;
                for query in 0..len {
                    let qv = &q[query * d + hs..query * d + hs + head_dim];
                    for key in 0..=query {
                        scores[key] = if table.is_some_and(|t| t[query * len + key]) {
                            f64::NEG_INFINITY
                        } else {
                            let kv = &k[key * d + hs..key * d + hs + head_dim];
                            qv.iter().zip(kv).map(|(a, b)| a * b).sum::<f64>() * scale
                        };
                    }
                    let max = scores[..=query]
                        .iter()
                        .copied()
                        .fold(f64::NEG_INFINITY, f64::max);
                    if max == f64::NEG_INFINITY {
                        return Err(Error::Input(format!(
                            "mask hides every key from query {query} at layer {layer}"
                        )));
                    }
                    let row = attention.row_mut(layer, head, query);
                    let mut sum = 0.0;
                    for key in 0..=query {
                        let e = (scores[key] - max).exp();
                        row[key] = e;
                        sum += e;
                    }
                    let out = &mut ctx[query * d + hs..query * d + hs + head_dim];
                    for key in 0..=query {
                        row[key] /= sum;
                        let w = row[key];
                        if w == 0.0 {
                            continue;
                        }
                        let vv = &v[key * d + hs..key * d + hs + head_dim];
                        for (o, &val) in out.iter_mut().zip(vv) {
                            *o += w * val;
                        }
                    }
                }
            }
            for (xi, pi) in x.iter_mut().zip(block.proj.apply(&ctx)) {
                *xi += pi;
            }

            let h = block.ln_mlp.apply(&x);
            let mut hidden = block.fc_in.apply(&h);
            hidden.iter_mut().for_each(|v| *v = gelu(*v));
            for (xi, mi) in x.iter_mut().zip(block.fc_out.apply(&hidden)) {
                *xi += mi;
            }
        }

        let last = &x[(len - 1) * d..];
        let logits = self.unembed.apply(&self.ln_final.apply(last));
        Ok(ForwardResult {
            logits: LogitVector::new(logits)?,
            attention,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{QuerySpan, ROW_SUM_TOLERANCE};

    fn small_config(seed: u64) -> ModelConfig {
        ModelConfig {
            num_layers: 3,
            num_heads: 2,
            model_dim: 8,
            vocab_size: 12,
            num_image_tokens: 4,
            eos_id: 0,
            seed,
        }
    }

    fn prompt() -> TokenSequence {
        TokenSequence::from_prompt(&[1, 2], &[3, 4, 5, 6], &[7, 8, 9]).unwrap()
    }

    #[test]
    fn same_seed_same_weights() {
        let a = Model::new(small_config(7)).unwrap();
        let b = Model::new(small_config(7)).unwrap();
        assert_eq!(a, b);
        let fa = a.forward(&prompt(), None).unwrap();
        let fb = b.forward(&prompt(), None).unwrap();
        assert_eq!(fa, fb);
        let c = Model::new(small_config(8)).unwrap();
        assert_ne!(c.forward(&prompt(), None).unwrap().logits, fa.logits);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = small_config(0);
        cfg.model_dim = 10;
        cfg.num_heads = 4;
        assert!(matches!(Model::new(cfg), Err(Error::Config(_))));
        let mut cfg = small_config(0);
        cfg.num_layers = 2;
        assert!(matches!(Model::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn rows_are_causal_and_normalized() {
        let model = Model::new(small_config(3)).unwrap();
        let res = model.forward(&prompt(), None).unwrap();
        res.validate(&model.dims(), prompt().len()).unwrap();
        for layer in 0..3 {
            for head in 0..2 {
                for query in 0..9 {
                    let row = res.attention.row(layer, head, query);
                    let s: f64 = row.iter().sum();
                    assert!((s - 1.0).abs() < ROW_SUM_TOLERANCE);
                    assert!(row[query + 1..].iter().all(|&w| w == 0.0));
                }
            }
        }
    }

    #[test]
    fn masked_key_is_exactly_zero_from_active_layer() {
        let model = Model::new(small_config(11)).unwrap();
        let seq = prompt();
        let mut mask = AttentionMask::new(2);
        mask.block_key(5);
        let plain = model.forward(&seq, None).unwrap();
        let masked = model.forward(&seq, Some(&mask)).unwrap();
        for head in 0..2 {
            for query in 5..seq.len() {
                assert_eq!(masked.attention.get(2, head, query, 5), 0.0);
                let s: f64 = masked.attention.row(2, head, query).iter().sum();
                assert!((s - 1.0).abs() < ROW_SUM_TOLERANCE);
            }
            for layer in 0..2 {
                for query in 0..seq.len() {
                    assert_eq!(
                        masked.attention.row(layer, head, query),
                        plain.attention.row(layer, head, query)
                    );
                }
            }
        }
        assert_ne!(masked.logits, plain.logits);
    }

    #[test]
    fn empty_mask_matches_unmasked_bitwise() {
        let model = Model::new(small_config(5)).unwrap();
        let mask = AttentionMask::new(2);
        assert_eq!(
            model.forward(&prompt(), Some(&mask)).unwrap(),
            model.forward(&prompt(), None).unwrap()
        );
    }

    #[test]
    fn input_errors() {
        let model = Model::new(small_config(0)).unwrap();
        let bad = TokenSequence::from_prompt(&[1, 2], &[3, 4, 5, 99], &[7]).unwrap();
        assert!(matches!(model.forward(&bad, None), Err(Error::Input(_))));
        let short_img = TokenSequence::from_prompt(&[1], &[3, 4], &[7]).unwrap();
        assert!(matches!(
            model.forward(&short_img, None),
            Err(Error::Input(_))
        ));
        let mut mask = AttentionMask::new(0);
        mask.block_key(100);
        assert!(model.forward(&prompt(), Some(&mask)).is_err());
        // hiding the only visible key of query 0
        let mut mask = AttentionMask::new(0);
        mask.block(QuerySpan::Range { start: 0, end: 1 }, 0);
        assert!(model.forward(&prompt(), Some(&mask)).is_err());
    }
}
