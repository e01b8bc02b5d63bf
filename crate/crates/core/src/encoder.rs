//! Sentence encoder: hash-bucket tokenizer, embedding lookup with mean
//! pooling, tanh MLP with inverted dropout, and a projection head that is
//! applied at training time only.
//!
//! Two encodes of the same batch under independent dropout masks produce the
//! positive pair the objectives act on.

use crate::error::{Error, Result};
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

/// Lowercase, whitespace-split, FNV-1a hash into `vocab_size` buckets.
/// Collisions are acceptable at this scale; no learned vocabulary.
pub fn tokenize(text: &str, vocab_size: usize) -> Result<TokenSequence> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(Error::Input("empty or whitespace-only sentence".into()));
    }
    let ids = trimmed
        .split_whitespace()
        .map(|tok| fnv1a(tok.to_lowercase().as_bytes()) as usize % vocab_size)
        .collect();
    Ok(TokenSequence { ids })
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub out_dim: usize,
    pub dropout_p: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 4096,
            embed_dim: 64,
            hidden_dim: 64,
            hidden_layers: 2,
            out_dim: 32,
            dropout_p: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0
            || self.embed_dim == 0
            || self.hidden_dim == 0
            || self.hidden_layers == 0
            || self.out_dim == 0
        {
            return Err(Error::Config("encoder dims must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub embed: Tensor,
    pub hidden_weights: Vec<Tensor>,
    pub hidden_biases: Vec<Tensor>,
    pub proj: Tensor,
}

pub const EMBED_INIT_OFFSET: f64 = 0.5;
pub const EMBED_INIT_NOISE: f64 = 0.25;

impl EncoderParams {
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        // The embedding table starts anisotropic: a shared positive offset on
        // every coordinate plus per-entry noise. All pooled sentence vectors
        // then point in nearly the same direction, which is the degenerate
        // geometry the contrast objective is meant to break up.
        let mut embed = Tensor::randn(
            vec![cfg.vocab_size, cfg.embed_dim],
            EMBED_INIT_NOISE,
            derive_seed(seed, 1),
        );
        for v in embed.data_mut() {
            *v += EMBED_INIT_OFFSET;
        }
        let mut hidden_weights = Vec::new();
        let mut hidden_biases = Vec::new();
        for l in 0..cfg.hidden_layers {
            let fan_in = if l == 0 { cfg.embed_dim } else { cfg.hidden_dim };
            let scale = (1.0 / fan_in as f64).sqrt();
            hidden_weights.push(Tensor::randn(
                vec![fan_in, cfg.hidden_dim],
                scale,
                derive_seed(seed, 10 + l as u64),
            ));
            hidden_biases.push(Tensor::zeros(vec![cfg.hidden_dim]));
        }
        let proj = Tensor::randn(
            vec![cfg.hidden_dim, cfg.out_dim],
            (1.0 / cfg.hidden_dim as f64).sqrt(),
            derive_seed(seed, 2),
        );
        Ok(EncoderParams {
            embed,
            hidden_weights,
            hidden_biases,
            proj,
        })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.embed];
        v.extend(self.hidden_weights.iter());
        v.extend(self.hidden_biases.iter());
        v.push(&self.proj);
        v
    }

    pub fn from_tensors(cfg: &EncoderConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let expected = 2 + 2 * cfg.hidden_layers;
        if tensors.len() != expected {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                expected,
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let embed = it.next().unwrap();
        let hidden_weights: Vec<Tensor> = it.by_ref().take(cfg.hidden_layers).collect();
        let hidden_biases: Vec<Tensor> = it.by_ref().take(cfg.hidden_layers).collect();
        let proj = it.next().unwrap();
        Ok(EncoderParams {
            embed,
            hidden_weights,
            hidden_biases,
            proj,
        })
    }
}

/// Splitmix64-style mixing; gives independent deterministic streams from one
/// base seed.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base
        .wrapping_add(tag.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Inverted-dropout mask: entries are 0 or 1/(1-p). Same (seed, shape, p)
/// always yields the same mask.
pub fn dropout_mask(shape: Vec<usize>, p: f64, seed: u64) -> Tensor {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let keep = 1.0 - p;
    let data = (0..n)
        .map(|_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(shape, data).expect("mask entries are finite")
}

/// Tape node ids of the encoder parameters, in `EncoderParams::tensors` order.
pub struct ParamVars {
    pub embed: VarId,
    pub hidden_weights: Vec<VarId>,
    pub hidden_biases: Vec<VarId>,
    pub proj: VarId,
}

impl ParamVars {
    pub fn insert(tape: &mut Tape, params: &EncoderParams) -> Result<Self> {
        let embed = tape.leaf(params.embed.clone())?;
        let mut hidden_weights = Vec::new();
        for w in &params.hidden_weights {
            hidden_weights.push(tape.leaf(w.clone())?);
        }
        let mut hidden_biases = Vec::new();
        for b in &params.hidden_biases {
            hidden_biases.push(tape.leaf(b.clone())?);
        }
        let proj = tape.leaf(params.proj.clone())?;
        Ok(ParamVars {
            embed,
            hidden_weights,
            hidden_biases,
            proj,
        })
    }

    pub fn ids(&self) -> Vec<VarId> {
        let mut v = vec![self.embed];
        v.extend(self.hidden_weights.iter().copied());
        v.extend(self.hidden_biases.iter().copied());
        v.push(self.proj);
        v
    }
}

/// Builds the encoder forward pass on an existing tape.
///
/// Training mode applies one independent dropout mask per hidden layer
/// (derived from `mask_seed`) and the projection head; test mode is mask-free
/// and stops at the last hidden layer. Masks enter the tape as constant
/// leaves, so gradient flows through the multiply only.
pub fn encode_graph(
    tape: &mut Tape,
    vars: &ParamVars,
    cfg: &EncoderConfig,
    batch: &[TokenSequence],
    mask_seed: u64,
    training: bool,
) -> Result<VarId> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let ids: Vec<Vec<usize>> = batch.iter().map(|s| s.ids.clone()).collect();
    let mut h = tape.pool_rows(vars.embed, ids)?;
    let n = batch.len();
    for l in 0..cfg.hidden_layers {
        // Mask the layer input, so the noise passes through the weights and
        // the network can learn to be robust to it.
        if training && cfg.dropout_p > 0.0 {
            let width = if l == 0 { cfg.embed_dim } else { cfg.hidden_dim };
            let mask = dropout_mask(
                vec![n, width],
                cfg.dropout_p,
                derive_seed(mask_seed, 100 + l as u64),
            );
            let mask_var = tape.leaf(mask)?;
            h = tape.mul(h, mask_var)?;
        }
        let lin = tape.matmul(h, vars.hidden_weights[l])?;
        let biased = tape.add_row(lin, vars.hidden_biases[l])?;
        h = tape.tanh(biased)?;
    }
    if training {
        h = tape.matmul(h, vars.proj)?;
    }
    Ok(h)
}

/// Pure forward pass: builds a private tape and returns the embedding matrix.
/// Deterministic given (params, batch, mask_seed).
pub fn encode(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    batch: &[TokenSequence],
    mask_seed: u64,
    training: bool,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = ParamVars::insert(&mut tape, params)?;
    let out = encode_graph(&mut tape, &vars, cfg, batch, mask_seed, training)?;
    Ok(tape.value(out).clone())
}

/// Two views of the same batch under independent dropout streams.
pub struct PositivePair {
    pub z1: Tensor,
    pub z2: Tensor,
}

pub const VIEW_A_TAG: u64 = 0xA11CE;
pub const VIEW_B_TAG: u64 = 0xB0B;

pub fn make_positive_pair(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    batch: &[TokenSequence],
    seed: u64,
) -> Result<PositivePair> {
    let z1 = encode(params, cfg, batch, derive_seed(seed, VIEW_A_TAG), true)?;
    let z2 = encode(params, cfg, batch, derive_seed(seed, VIEW_B_TAG), true)?;
    Ok(PositivePair { z1, z2 })
}
