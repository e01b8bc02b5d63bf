//! Finite-difference validation of every differentiable tape op, plus
//! linearity and replay determinism of the backward sweep.

use conrep_core::encoder::{encode_graph, tokenize, EncoderConfig, EncoderParams, ParamVars};
use conrep_core::fd::{finite_difference_check, CoordPlan};
use conrep_core::objectives::{total_loss_graph, ObjectiveConfig};
use conrep_core::tape::{Tape, VarId};
use conrep_core::tensor::Tensor;
use conrep_core::Result;

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;

/// Random input in [-2, 2].
fn rand_input(shape: Vec<usize>, seed: u64) -> Tensor {
    let base = Tensor::randn(shape.clone(), 1.0, seed);
    let data = base.data().iter().map(|v| (v * 0.7).clamp(-2.0, 2.0)).collect();
    Tensor::new(shape, data).unwrap()
}

/// FD-checks a scalar graph built from leaf tensors.
fn check_graph<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Tape, &[VarId]) -> Result<VarId>,
{
    let f = |params: &[Tensor]| -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let ids: Vec<VarId> = params
            .iter()
            .map(|p| tape.leaf(p.clone()))
            .collect::<Result<_>>()?;
        let out = build(&mut tape, &ids)?;
        let value = tape.value(out).scalar_value();
        let grads = tape.backward(out)?;
        Ok((value, ids.iter().map(|&i| grads[i].clone()).collect()))
    };
    finite_difference_check(f, inputs, H, CoordPlan::All).unwrap()
}

#[test]
fn grad_matmul() {
    for seed in 0..5 {
        let a = rand_input(vec![3, 4], seed);
        let b = rand_input(vec![4, 2], 100 + seed);
        let err = check_graph(&[a, b], |t, ids| {
            let m = t.matmul(ids[0], ids[1])?;
            let sq = t.mul(m, m)?;
            t.sum_all(sq)
        });
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn grad_matmul_nt() {
    for seed in 0..5 {
        let a = rand_input(vec![3, 4], seed);
        let b = rand_input(vec![5, 4], 200 + seed);
        let err = check_graph(&[a, b], |t, ids| {
            let m = t.matmul_nt(ids[0], ids[1])?;
            let sq = t.mul(m, m)?;
            t.sum_all(sq)
        });
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn grad_elementwise_chain() {
    // exp, log (on a positive-shifted input), tanh, neg, scale, add, sub, mul
    for seed in 0..5 {
        let a = rand_input(vec![2, 3], 300 + seed);
        let b = rand_input(vec![2, 3], 400 + seed);
        let err = check_graph(&[a, b], |t, ids| {
            let s = t.add(ids[0], ids[1])?;
            let d = t.sub(ids[0], ids[1])?;
            let m = t.mul(s, d)?;
            let th = t.tanh(m)?;
            let e = t.exp(th)?;
            // e is in [1/e, e], safely positive for log
            let l = t.log(e)?;
            let n = t.neg(l)?;
            let sc = t.scale(n, -1.7)?;
            t.mean_all(sc)
        });
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn grad_add_row() {
    for seed in 0..5 {
        let a = rand_input(vec![4, 3], 500 + seed);
        let b = rand_input(vec![3], 600 + seed);
        let err = check_graph(&[a, b], |t, ids| {
            let y = t.add_row(ids[0], ids[1])?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        });
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn grad_l2_norm() {
    for seed in 0..5 {
        // offset away from zero so the norm is differentiable
        let base = rand_input(vec![4], 700 + seed);
        let data = base.data().iter().map(|v| v + 3.0).collect();
        let a = Tensor::new(vec![4], data).unwrap();
        let err = check_graph(&[a], |t, ids| t.l2_norm_all(ids[0]));
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn grad_rows_normalize() {
    for seed in 0..5 {
        let base = rand_input(vec![3, 4], 800 + seed);
        let data = base.data().iter().map(|v| v + 2.5).collect();
        let a = Tensor::new(vec![3, 4], data).unwrap();
        let err = check_graph(&[a], |t, ids| {
            let y = t.rows_normalize(ids[0])?;
            let w = rand_input(vec![3, 4], 900 + seed);
            let wv = t.leaf(w)?;
            let p = t.mul(y, wv)?;
            t.sum_all(p)
        });
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn grad_mean_diag_and_log_mean_exp() {
    for seed in 0..5 {
        let a = rand_input(vec![4, 4], 1000 + seed);
        let err = check_graph(&[a.clone()], |t, ids| {
            let d = t.mean_diag(ids[0])?;
            let l = t.mean_row_log_mean_exp(ids[0])?;
            t.sub(l, d)
        });
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn grad_pool_rows() {
    for seed in 0..5 {
        let table = rand_input(vec![6, 3], 1100 + seed);
        let ids_list = vec![vec![0, 2, 2], vec![5], vec![1, 3, 4, 0]];
        let il = ids_list.clone();
        let err = check_graph(&[table], move |t, ids| {
            let pooled = t.pool_rows(ids[0], il.clone())?;
            let sq = t.mul(pooled, pooled)?;
            t.sum_all(sq)
        });
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn backward_sum_is_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
    let s = tape.sum_all(x).unwrap();
    let grads = tape.backward(s).unwrap();
    assert_eq!(grads[x].data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_squared_norm() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2], vec![1.0, -2.0]).unwrap()).unwrap();
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum_all(sq).unwrap();
    let grads = tape.backward(s).unwrap();
    assert_eq!(grads[x].data(), &[2.0, -4.0]);
}

#[test]
fn backward_unused_leaf_zero() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
    let unused = tape.leaf(Tensor::new(vec![2], vec![5.0, 6.0]).unwrap()).unwrap();
    let s = tape.sum_all(x).unwrap();
    let grads = tape.backward(s).unwrap();
    assert_eq!(grads[unused].data(), &[0.0, 0.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
    assert!(tape.backward(x).is_err());
}

#[test]
fn backward_accumulates_over_uses() {
    // y = x + x => dy/dx = 2 per coordinate
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
    let y = tape.add(x, x).unwrap();
    let s = tape.sum_all(y).unwrap();
    let grads = tape.backward(s).unwrap();
    assert_eq!(grads[x].data(), &[2.0, 2.0]);
}

// backward(alpha f + beta g) = alpha backward(f) + beta backward(g)
#[test]
fn backward_linearity() {
    let x0 = rand_input(vec![3, 3], 42);
    let grad_of = |alpha: f64, beta: f64| -> Vec<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone()).unwrap();
        let f = {
            let sq = tape.mul(x, x).unwrap();
            tape.sum_all(sq).unwrap()
        };
        let g = {
            let th = tape.tanh(x).unwrap();
            tape.mean_all(th).unwrap()
        };
        let fa = tape.scale(f, alpha).unwrap();
        let gb = tape.scale(g, beta).unwrap();
        let total = tape.add(fa, gb).unwrap();
        let grads = tape.backward(total).unwrap();
        grads[x].data().to_vec()
    };
    let gf = grad_of(1.0, 0.0);
    let gg = grad_of(0.0, 1.0);
    let combined = grad_of(2.5, -1.25);
    for i in 0..gf.len() {
        assert!((combined[i] - (2.5 * gf[i] - 1.25 * gg[i])).abs() < 1e-12);
    }
}

#[test]
fn replay_determinism_bit_identical() {
    let build = || {
        let mut tape = Tape::new();
        let x = tape.leaf(rand_input(vec![4, 4], 9)).unwrap();
        let y = tape.leaf(rand_input(vec![4, 4], 10)).unwrap();
        let m = tape.matmul(x, y).unwrap();
        let l = tape.mean_row_log_mean_exp(m).unwrap();
        let grads = tape.backward(l).unwrap();
        (grads[x].clone(), grads[y].clone())
    };
    let (a1, b1) = build();
    let (a2, b2) = build();
    assert_eq!(a1, a2);
    assert_eq!(b1, b2);
}

#[test]
fn fd_check_quadratic() {
    let f = |params: &[Tensor]| -> Result<(f64, Vec<Tensor>)> {
        let x = params[0].data()[0];
        Ok((x * x, vec![Tensor::new(vec![1], vec![2.0 * x]).unwrap()]))
    };
    let params = [Tensor::new(vec![1], vec![3.0]).unwrap()];
    let err = finite_difference_check(f, &params, 1e-5, CoordPlan::All).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn fd_check_constant() {
    let f = |params: &[Tensor]| -> Result<(f64, Vec<Tensor>)> {
        Ok((7.0, vec![Tensor::zeros(params[0].shape().to_vec())]))
    };
    let params = [Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()];
    let err = finite_difference_check(f, &params, 1e-5, CoordPlan::All).unwrap();
    assert!(err < 1e-12);
}

#[test]
fn fd_check_detects_nondeterminism() {
    use std::cell::Cell;
    let calls = Cell::new(0.0f64);
    let f = |params: &[Tensor]| -> Result<(f64, Vec<Tensor>)> {
        calls.set(calls.get() + 1.0);
        Ok((calls.get(), vec![Tensor::zeros(params[0].shape().to_vec())]))
    };
    let params = [Tensor::new(vec![1], vec![0.0]).unwrap()];
    assert!(finite_difference_check(f, &params, 1e-5, CoordPlan::All).is_err());
}

fn joint_loss_fn(
    cfg: EncoderConfig,
    batch: Vec<conrep_core::encoder::TokenSequence>,
    obj: ObjectiveConfig,
) -> impl Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>)> {
    move |tensors: &[Tensor]| {
        let params = EncoderParams::from_tensors(&cfg, tensors.to_vec())?;
        let mut tape = Tape::new();
        let vars = ParamVars::insert(&mut tape, &params)?;
        let z1 = tape_view(&mut tape, &vars, &cfg, &batch, 1)?;
        let z2 = tape_view(&mut tape, &vars, &cfg, &batch, 2)?;
        let loss = total_loss_graph(&mut tape, z1, z2, &obj)?;
        let value = tape.value(loss).scalar_value();
        let grads = tape.backward(loss)?;
        Ok((value, vars.ids().iter().map(|&i| grads[i].clone()).collect()))
    }
}

fn tape_view(
    tape: &mut Tape,
    vars: &ParamVars,
    cfg: &EncoderConfig,
    batch: &[conrep_core::encoder::TokenSequence],
    seed: u64,
) -> Result<VarId> {
    encode_graph(tape, vars, cfg, batch, seed, true)
}

// The joint loss on a 4-sentence batch through a small encoder: relative
// error < 1e-4. Dropout off so the function is deterministic under
// perturbation.
#[test]
fn grad_joint_loss_small_encoder() {
    let cfg = EncoderConfig {
        vocab_size: 64,
        embed_dim: 6,
        hidden_dim: 6,
        hidden_layers: 2,
        out_dim: 4,
        dropout_p: 0.0,
    };
    let params = EncoderParams::init(&cfg, 5).unwrap();
    let batch: Vec<_> = ["alpha beta", "gamma delta epsilon", "zeta", "eta theta iota"]
        .iter()
        .map(|s| tokenize(s, cfg.vocab_size).unwrap())
        .collect();
    let obj = ObjectiveConfig {
        temperature: 0.05,
        lambda: 0.4,
    };
    let f = joint_loss_fn(cfg, batch, obj);
    let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    let err = finite_difference_check(f, &tensors, 1e-5, CoordPlan::All).unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

// Random 4x8 embedding pairs fed straight into the objective graph.
#[test]
fn grad_total_loss_random_pairs() {
    for seed in 0..5 {
        let z1 = rand_input(vec![4, 8], 2000 + seed);
        let z2 = rand_input(vec![4, 8], 3000 + seed);
        let obj = ObjectiveConfig {
            temperature: 0.05,
            lambda: 0.4,
        };
        let err = check_graph(&[z1, z2], move |t, ids| {
            total_loss_graph(t, ids[0], ids[1], &obj)
        });
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}
