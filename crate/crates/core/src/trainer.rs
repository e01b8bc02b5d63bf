//! Mini-batch training loop: seeded shuffling, positive-pair construction,
//! joint loss, backprop, Adam, and dev-set checkpoint selection.

use crate::encoder::{
    derive_seed, encode_graph, tokenize, EncoderConfig, EncoderParams, ParamVars, TokenSequence,
    VIEW_A_TAG, VIEW_B_TAG,
};
use crate::error::{Error, Result};
use crate::eval::{sts_evaluate, StsExample};
use crate::objectives::{total_loss, total_loss_graph, LossBreakdown, ObjectiveConfig};
use crate::tape::Tape;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub temperature: f64,
    pub lambda: f64,
    pub dropout_p: f64,
    pub seed: u64,
    /// Dev-set Spearman is computed every this many steps (and at the end).
    pub dev_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-3,
            epochs: 3,
            temperature: 0.05,
            lambda: 0.4,
            dropout_p: 0.1,
            seed: 0,
            dev_interval: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config("dropout p must be in [0, 1)".into()));
        }
        if self.dev_interval == 0 {
            return Err(Error::Config("dev interval must be >= 1".into()));
        }
        ObjectiveConfig {
            temperature: self.temperature,
            lambda: self.lambda,
        }
        .validate()
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            temperature: self.temperature,
            lambda: self.lambda,
        }
    }
}

/// Standard bias-corrected Adam, one state per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Input(format!(
            "parameter/gradient/state count mismatch: {}/{}/{}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if !p.same_shape(g) {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        for i in 0..p.len() {
            let gi = g.data()[i];
            let mi = state.beta1 * m.data()[i] + (1.0 - state.beta1) * gi;
            let vi = state.beta2 * v.data()[i] + (1.0 - state.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            p.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
        p.check_finite("adam_step")?;
    }
    Ok(())
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub encoder_config: EncoderConfig,
    pub train_config: TrainConfig,
    pub params: EncoderParams,
    pub dev_score: f64,
    pub step: u64,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub breakdown: LossBreakdown,
}

pub struct TrainOutcome {
    pub best: Checkpoint,
    pub trace: Vec<TraceRow>,
    pub initial_params: EncoderParams,
    /// Parameters after the last optimizer step (not necessarily the best).
    pub final_params: EncoderParams,
    /// Every (step, dev spearman) measurement taken during the run.
    pub dev_history: Vec<(u64, f64)>,
}

/// Runs the full training loop and returns the highest-dev-score checkpoint
/// (ties broken by earliest step) plus the per-step loss trace.
pub fn train(
    corpus: &[String],
    dev: &[StsExample],
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut enc_cfg = *enc_cfg;
    enc_cfg.dropout_p = cfg.dropout_p;
    enc_cfg.validate()?;
    if corpus.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "corpus has {} sentences, need at least batch size {}",
            corpus.len(),
            cfg.batch_size
        )));
    }
    if dev.is_empty() {
        return Err(Error::Config("dev set must be non-empty".into()));
    }

    let tokenized: Vec<TokenSequence> = corpus
        .iter()
        .map(|s| tokenize(s, enc_cfg.vocab_size))
        .collect::<Result<_>>()?;

    let mut params = EncoderParams::init(&enc_cfg, cfg.seed)?;
    let initial_params = params.clone();
    let objective = cfg.objective();
    let mut adam = AdamState::new(&params.tensors().into_iter().cloned().collect::<Vec<_>>());

    let mut best: Option<Checkpoint> = None;
    let mut trace = Vec::new();
    let mut dev_history: Vec<(u64, f64)> = Vec::new();
    let mut step: u64 = 0;

    let maybe_eval = |params: &EncoderParams,
                      step: u64,
                      best: &mut Option<Checkpoint>,
                      history: &mut Vec<(u64, f64)>|
     -> Result<()> {
        let score = sts_evaluate(params, &enc_cfg, dev)?;
        history.push((step, score));
        let better = match best {
            None => true,
            Some(b) => score > b.dev_score,
        };
        if better {
            *best = Some(Checkpoint {
                version: CHECKPOINT_VERSION,
                encoder_config: enc_cfg,
                train_config: *cfg,
                params: params.clone(),
                dev_score: score,
                step,
            });
        }
        Ok(())
    };

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..tokenized.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x5a0f + epoch as u64));
        order.shuffle(&mut rng);

        for chunk in order.chunks_exact(cfg.batch_size) {
            let batch: Vec<TokenSequence> =
                chunk.iter().map(|&i| tokenized[i].clone()).collect();
            let mask_seed = derive_seed(cfg.seed, 0x57e9 ^ step);

            let mut tape = Tape::new();
            let vars = ParamVars::insert(&mut tape, &params)?;
            let z1 = encode_graph(
                &mut tape,
                &vars,
                &enc_cfg,
                &batch,
                derive_seed(mask_seed, VIEW_A_TAG),
                true,
            )?;
            let z2 = encode_graph(
                &mut tape,
                &vars,
                &enc_cfg,
                &batch,
                derive_seed(mask_seed, VIEW_B_TAG),
                true,
            )?;
            let loss = total_loss_graph(&mut tape, z1, z2, &objective)?;

            let breakdown = total_loss(tape.value(z1), tape.value(z2), &objective)?;
            if !breakdown.total.is_finite() {
                return Err(Error::Config(format!(
                    "non-finite loss at step {} (lambda {}, tau {})",
                    step, cfg.lambda, cfg.temperature
                )));
            }
            trace.push(TraceRow { step, breakdown });

            let grads = tape.backward(loss)?;
            let ids = vars.ids();
            let grad_tensors: Vec<Tensor> = ids.iter().map(|&id| grads[id].clone()).collect();
            let mut tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
            adam_step(&mut tensors, &grad_tensors, &mut adam, cfg.learning_rate)?;
            params = EncoderParams::from_tensors(&enc_cfg, tensors)?;

            step += 1;
            if step % cfg.dev_interval as u64 == 0 {
                maybe_eval(&params, step, &mut best, &mut dev_history)?;
            }
        }
        let _ = epoch;
    }
    // Always evaluate the final parameters so short runs still checkpoint.
    if step % cfg.dev_interval as u64 != 0 || step == 0 {
        maybe_eval(&params, step, &mut best, &mut dev_history)?;
    }

    Ok(TrainOutcome {
        best: best.expect("at least one dev evaluation"),
        trace,
        initial_params,
        final_params: params,
        dev_history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub dev_score: f64,
    pub best_step: u64,
}

/// Grid search over batch size, learning rate and lambda with a shared base
/// seed. Rows come back sorted by dev score, best first; ties keep grid order.
pub fn sweep(
    corpus: &[String],
    dev: &[StsExample],
    enc_cfg: &EncoderConfig,
    base: &TrainConfig,
    batch_sizes: &[usize],
    learning_rates: &[f64],
    lambdas: &[f64],
) -> Result<Vec<SweepRow>> {
    if batch_sizes.is_empty() || learning_rates.is_empty() || lambdas.is_empty() {
        return Err(Error::Config("sweep grid must be non-empty".into()));
    }
    let mut rows = Vec::new();
    for &n in batch_sizes {
        for &lr in learning_rates {
            for &lambda in lambdas {
                let cfg = TrainConfig {
                    batch_size: n,
                    learning_rate: lr,
                    lambda,
                    ..*base
                };
                let outcome = train(corpus, dev, enc_cfg, &cfg)?;
                rows.push(SweepRow {
                    batch_size: n,
                    learning_rate: lr,
                    lambda,
                    dev_score: outcome.best.dev_score,
                    best_step: outcome.best.step,
                });
            }
        }
    }
    rows.sort_by(|a, b| b.dev_score.partial_cmp(&a.dev_score).unwrap());
    Ok(rows)
}
