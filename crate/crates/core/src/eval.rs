//! Measurement suite: cosine-scored STS with Spearman correlation, the
//! frozen-embedding logistic-regression probe, and alignment/uniformity on
//! normalized embeddings. Evaluation always uses test-mode embeddings (no
//! dropout, no projection head).

use crate::encoder::{encode, tokenize, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::tensor::{dot, l2_norm, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StsExample {
    pub sentence_a: String,
    pub sentence_b: String,
    pub gold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeExample {
    pub label: usize,
    pub sentence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub spearman: f64,
    pub alignment: f64,
    pub uniformity: f64,
    pub probe_accuracy: Option<f64>,
}

/// Fractional (average) ranks: ties get the mean of their rank span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie block [i, j] shares the mean rank
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(pred: &[f64], gold: &[f64]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::Input(format!(
            "length mismatch: {} vs {}",
            pred.len(),
            gold.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::Input("need at least two pairs".into()));
    }
    let constant = |xs: &[f64]| xs.iter().all(|&v| v == xs[0]);
    if constant(pred) {
        return Err(Error::UndefinedCorrelation(
            "predictions are constant".into(),
        ));
    }
    if constant(gold) {
        return Err(Error::UndefinedCorrelation("gold scores are constant".into()));
    }
    let rp = average_ranks(pred);
    let rg = average_ranks(gold);
    Ok(pearson(&rp, &rg))
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

/// Embeds every sentence in test mode, scores each pair by cosine, returns
/// the Spearman correlation against the gold scores.
pub fn sts_evaluate(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    dataset: &[StsExample],
) -> Result<f64> {
    if dataset.len() < 2 {
        return Err(Error::Input("STS dataset needs at least two pairs".into()));
    }
    let mut scores = Vec::with_capacity(dataset.len());
    for (idx, ex) in dataset.iter().enumerate() {
        let batch = [
            tokenize(&ex.sentence_a, cfg.vocab_size)?,
            tokenize(&ex.sentence_b, cfg.vocab_size)?,
        ];
        let z = encode(params, cfg, &batch, 0, false)?;
        let (na, nb) = (l2_norm(z.row(0)), l2_norm(z.row(1)));
        if na == 0.0 || nb == 0.0 {
            return Err(Error::DegenerateEmbedding { row: idx });
        }
        // identical embeddings have cosine exactly 1; the ratio below would
        // round to values a few ulp off
        if z.row(0) == z.row(1) {
            scores.push(1.0);
        } else {
            scores.push(dot(z.row(0), z.row(1)) / (na * nb));
        }
    }
    let gold: Vec<f64> = dataset.iter().map(|e| e.gold).collect();
    spearman(&scores, &gold)
}

fn check_unit_rows(z: &Tensor, op: &'static str) -> Result<()> {
    for i in 0..z.nrows() {
        if (l2_norm(z.row(i)) - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!(
                "{op}: row {i} is not unit-norm (norm {})",
                l2_norm(z.row(i))
            )));
        }
    }
    Ok(())
}

/// Mean squared distance between paired L2-normalized views (exponent 2).
/// Smaller is better.
pub fn alignment_metric(z1: &Tensor, z2: &Tensor) -> Result<f64> {
    if z1.shape() != z2.shape() {
        return Err(Error::ShapeMismatch {
            op: "alignment_metric",
            lhs: z1.shape().to_vec(),
            rhs: z2.shape().to_vec(),
        });
    }
    check_unit_rows(z1, "alignment_metric")?;
    check_unit_rows(z2, "alignment_metric")?;
    crate::objectives::reconstruction_penalty(z1, z2)
}

/// log of the mean over ordered pairs i != j of exp(-2 ||z_i - z_j||^2),
/// computed with a stable log-sum-exp. Diagonal excluded: self-pairs would
/// bias toward 0.
pub fn uniformity_metric(z: &Tensor) -> Result<f64> {
    let n = z.nrows();
    if n < 2 {
        return Err(Error::Input("uniformity needs at least two rows".into()));
    }
    check_unit_rows(z, "uniformity_metric")?;
    let mut exponents = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d2: f64 = z
                .row(i)
                .iter()
                .zip(z.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            exponents.push(-2.0 * d2);
        }
    }
    Ok(crate::tape::row_log_mean_exp(&exponents))
}

/// L2-normalize each row; rejects zero rows.
pub fn normalize_rows(z: &Tensor) -> Result<Tensor> {
    let (n, d) = (z.nrows(), z.ncols());
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        let norm = l2_norm(z.row(i));
        if norm == 0.0 {
            return Err(Error::DegenerateEmbedding { row: i });
        }
        data.extend(z.row(i).iter().map(|v| v / norm));
    }
    Tensor::new(vec![n, d], data)
}

pub struct ProbeSettings {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            iterations: 500,
            learning_rate: 0.5,
            l2: 1e-4,
        }
    }
}

/// Multinomial logistic regression on frozen test-mode embeddings:
/// softmax + cross-entropy, full-batch gradient descent, zero init.
/// Returns test accuracy. Argmax ties go to the lowest class id, so the
/// untrained classifier predicts class 0 everywhere.
pub fn probe_train_eval(
    train: &[ProbeExample],
    test: &[ProbeExample],
    params: &EncoderParams,
    cfg: &EncoderConfig,
    settings: &ProbeSettings,
) -> Result<f64> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Input("probe datasets must be non-empty".into()));
    }
    let classes = {
        let max = train.iter().map(|e| e.label).max().unwrap();
        max + 1
    };
    let distinct: std::collections::BTreeSet<usize> = train.iter().map(|e| e.label).collect();
    if distinct.len() < 2 {
        return Err(Error::Input("probe training set has a single class".into()));
    }

    let embed_set = |set: &[ProbeExample]| -> Result<Tensor> {
        let batch: Vec<_> = set
            .iter()
            .map(|e| tokenize(&e.sentence, cfg.vocab_size))
            .collect::<Result<_>>()?;
        encode(params, cfg, &batch, 0, false)
    };
    let x_train = embed_set(train)?;
    let x_test = embed_set(test)?;
    let d = x_train.ncols();
    let n = train.len();

    let mut w = vec![0.0; d * classes];
    let mut b = vec![0.0; classes];
    for _ in 0..settings.iterations {
        let mut gw = vec![0.0; d * classes];
        let mut gb = vec![0.0; classes];
        for (i, ex) in train.iter().enumerate() {
            let x = x_train.row(i);
            let probs = softmax_logits(x, &w, &b, classes);
            for c in 0..classes {
                let err = probs[c] - if c == ex.label { 1.0 } else { 0.0 };
                gb[c] += err;
                for j in 0..d {
                    gw[j * classes + c] += err * x[j];
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        for (wv, gv) in w.iter_mut().zip(&gw) {
            *wv -= settings.learning_rate * (gv * inv_n + settings.l2 * *wv);
        }
        for (bv, gv) in b.iter_mut().zip(&gb) {
            *bv -= settings.learning_rate * gv * inv_n;
        }
    }

    let mut correct = 0usize;
    for (i, ex) in test.iter().enumerate() {
        let probs = softmax_logits(x_test.row(i), &w, &b, classes);
        let mut best = 0;
        for c in 1..classes {
            if probs[c] > probs[best] {
                best = c;
            }
        }
        if best == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

fn softmax_logits(x: &[f64], w: &[f64], b: &[f64], classes: usize) -> Vec<f64> {
    let mut logits = vec![0.0; classes];
    for c in 0..classes {
        let mut s = b[c];
        for (j, xv) in x.iter().enumerate() {
            s += xv * w[j * classes + c];
        }
        logits[c] = s;
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
    logits
}
