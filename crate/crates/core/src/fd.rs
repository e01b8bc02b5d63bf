//! Central finite-difference validation of analytic gradients.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which parameter coordinates to probe.
///
/// `All` sweeps every coordinate. `Sampled` probes a seeded random subset per
/// tensor, which keeps the full-model check fast while still covering every
/// parameter tensor.
#[derive(Debug, Clone, Copy)]
pub enum CoordPlan {
    All,
    Sampled { per_tensor: usize, seed: u64 },
}

/// Compares the analytic gradient of a scalar function against central finite
/// differences and returns the maximum relative error over probed coordinates.
///
/// `f` must be deterministic given its inputs (checked by evaluating twice)
/// and must return both the value and the analytic gradients, one tensor per
/// parameter.
/// Gradient magnitudes below this are indistinguishable from finite-difference
/// rounding noise at h = 1e-5 and are not compared.
pub const ABS_FLOOR: f64 = 1e-7;

pub fn finite_difference_check<F>(
    f: F,
    params: &[Tensor],
    h: f64,
    plan: CoordPlan,
) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
{
    if h <= 0.0 {
        return Err(Error::Config(format!("step h must be positive, got {h}")));
    }
    let (v1, grads) = f(params)?;
    let (v2, _) = f(params)?;
    if v1 != v2 {
        return Err(Error::NonDeterministic {
            first: v1,
            second: v2,
        });
    }
    if grads.len() != params.len() {
        return Err(Error::Input(format!(
            "expected {} gradient tensors, got {}",
            params.len(),
            grads.len()
        )));
    }

    let mut max_rel = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (ti, p) in params.iter().enumerate() {
        let coords: Vec<usize> = match plan {
            CoordPlan::All => (0..p.len()).collect(),
            CoordPlan::Sampled { per_tensor, seed } => {
                if p.len() <= per_tensor {
                    (0..p.len()).collect()
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (ti as u64).wrapping_mul(0x9e37));
                    sample(&mut rng, p.len(), per_tensor).into_vec()
                }
            }
        };
        for ci in coords {
            let orig = work[ti].data()[ci];
            work[ti].data_mut()[ci] = orig + h;
            let (plus, _) = f(&work)?;
            work[ti].data_mut()[ci] = orig - h;
            let (minus, _) = f(&work)?;
            work[ti].data_mut()[ci] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads[ti].data()[ci];
            // Central differences cannot resolve slopes below the rounding
            // noise of f; coordinates where both sides sit under that floor
            // count as matching.
            if analytic.abs().max(numeric.abs()) < ABS_FLOOR {
                continue;
            }
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
