//! Similarity matrix, contrast loss, reconstruction penalty, the
//! lambda-weighted total loss, and the alignment/uniformity decomposition of
//! the contrast term.
//!
//! Sign convention: both returned losses are quantities to MINIMIZE. The
//! contrast loss is the negated InfoNCE objective; the reconstruction penalty
//! is the positive mean squared view distance. Gradient descent on
//! `total = contrast + lambda * penalty` attracts positives, repels in-batch
//! negatives and shrinks pair distance.

use crate::error::{Error, Result};
use crate::tape::{row_log_mean_exp, Tape, VarId};
use crate::tensor::{dot, l2_norm, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub temperature: f64,
    pub lambda: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            temperature: 0.05,
            lambda: 0.4,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contrast_loss: f64,
    pub reconstruction_penalty: f64,
    pub total: f64,
    pub alignment_term: f64,
    pub uniformity_term: f64,
}

/// Cosine similarities between rows of two equally shaped N x d matrices.
/// Entry (i, j) is cos(z1_i, z2_j).
pub fn pairwise_cosine(z1: &Tensor, z2: &Tensor) -> Result<Tensor> {
    if z1.shape() != z2.shape() || z1.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "pairwise_cosine",
            lhs: z1.shape().to_vec(),
            rhs: z2.shape().to_vec(),
        });
    }
    let n = z1.nrows();
    let norms1: Vec<f64> = (0..n).map(|i| l2_norm(z1.row(i))).collect();
    let norms2: Vec<f64> = (0..n).map(|i| l2_norm(z2.row(i))).collect();
    for (i, (&a, &b)) in norms1.iter().zip(&norms2).enumerate() {
        if a == 0.0 || b == 0.0 {
            return Err(Error::DegenerateEmbedding { row: i });
        }
    }
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            data.push(dot(z1.row(i), z2.row(j)) / (norms1[i] * norms2[j]));
        }
    }
    Tensor::new(vec![n, n], data)
}

/// Negated InfoNCE: -(1/N) sum_i log[ exp(S_ii/tau) / ((1/N) sum_k exp(S_ik/tau)) ].
/// Log-sum-exp is computed with row-max subtraction; tau = 0.05 pushes raw
/// exponents to e^20.
pub fn contrast_loss(similarity: &Tensor, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if similarity.shape().len() != 2 || similarity.nrows() != similarity.ncols() {
        return Err(Error::ShapeMismatch {
            op: "contrast_loss",
            lhs: similarity.shape().to_vec(),
            rhs: similarity.shape().to_vec(),
        });
    }
    let n = similarity.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        let scaled: Vec<f64> = similarity.row(i).iter().map(|s| s / temperature).collect();
        let lme = row_log_mean_exp(&scaled);
        acc += scaled[i] - lme;
    }
    Ok(-acc / n as f64)
}

/// Mean squared distance between paired views: (1/N) sum_i ||z1_i - z2_i||^2.
pub fn reconstruction_penalty(z1: &Tensor, z2: &Tensor) -> Result<f64> {
    if z1.shape() != z2.shape() {
        return Err(Error::ShapeMismatch {
            op: "reconstruction_penalty",
            lhs: z1.shape().to_vec(),
            rhs: z2.shape().to_vec(),
        });
    }
    let n = z1.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        acc += z1
            .row(i)
            .iter()
            .zip(z2.row(i))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(acc / n as f64)
}

/// The two bracketed terms of the large-batch asymptotics of the contrast
/// objective. Their difference equals minus the contrast loss.
pub fn decomposition(similarity: &Tensor, temperature: f64) -> Result<(f64, f64)> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let n = similarity.nrows();
    let mut alignment = 0.0;
    let mut uniformity = 0.0;
    for i in 0..n {
        alignment += similarity.at(i, i) / temperature;
        let scaled: Vec<f64> = similarity.row(i).iter().map(|s| s / temperature).collect();
        uniformity += row_log_mean_exp(&scaled);
    }
    Ok((alignment / n as f64, uniformity / n as f64))
}

/// Full loss breakdown on a positive pair. Reconstruction acts on the raw
/// (unnormalized) embeddings; cosine normalization happens only inside the
/// similarity computation.
pub fn total_loss(z1: &Tensor, z2: &Tensor, cfg: &ObjectiveConfig) -> Result<LossBreakdown> {
    cfg.validate()?;
    let similarity = pairwise_cosine(z1, z2)?;
    let contrast = contrast_loss(&similarity, cfg.temperature)?;
    let penalty = reconstruction_penalty(z1, z2)?;
    let (alignment_term, uniformity_term) = decomposition(&similarity, cfg.temperature)?;
    Ok(LossBreakdown {
        contrast_loss: contrast,
        reconstruction_penalty: penalty,
        total: contrast + cfg.lambda * penalty,
        alignment_term,
        uniformity_term,
    })
}

/// Tape version of `total_loss` used by the trainer: builds
/// contrast + lambda * penalty as a differentiable scalar node.
pub fn total_loss_graph(
    tape: &mut Tape,
    z1: VarId,
    z2: VarId,
    cfg: &ObjectiveConfig,
) -> Result<VarId> {
    cfg.validate()?;
    let z1n = tape.rows_normalize(z1)?;
    let z2n = tape.rows_normalize(z2)?;
    let cosines = tape.matmul_nt(z1n, z2n)?;
    let scaled = tape.scale(cosines, 1.0 / cfg.temperature)?;
    let lme = tape.mean_row_log_mean_exp(scaled)?;
    let diag = tape.mean_diag(scaled)?;
    let contrast = tape.sub(lme, diag)?;

    let diff = tape.sub(z1, z2)?;
    let sq = tape.mul(diff, diff)?;
    let sum_sq = tape.sum_all(sq)?;
    let n = tape.value(z1).nrows() as f64;
    let penalty = tape.scale(sum_sq, 1.0 / n)?;

    let weighted = tape.scale(penalty, cfg.lambda)?;
    tape.add(contrast, weighted)
}
