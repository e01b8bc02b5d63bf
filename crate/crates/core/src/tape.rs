//! Wengert tape for reverse-mode automatic differentiation.
//!
//! Every forward op appends a node holding its output value and the parent
//! indices needed for the backward rule. Parents always precede their node,
//! so a single reverse sweep over the tape computes all gradients.
//! NaN/Inf in any op output is a hard error, never silently propagated.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a node on the tape.
pub type VarId = usize;

#[derive(Debug, Clone)]
enum Op {
    /// Leaf tensor (parameter or constant). No parents.
    Leaf,
    /// C = A * B
    MatMul(VarId, VarId),
    /// C = A * B^T
    MatMulNT(VarId, VarId),
    Add(VarId, VarId),
    Sub(VarId, VarId),
    /// Elementwise product.
    Mul(VarId, VarId),
    /// Matrix plus a row vector broadcast over rows.
    AddRow(VarId, VarId),
    Scale(VarId, f64),
    Neg(VarId),
    Exp(VarId),
    Log(VarId),
    Tanh(VarId),
    SumAll(VarId),
    MeanAll(VarId),
    /// sqrt of the sum of squares over all entries.
    L2NormAll(VarId),
    /// Each row divided by its L2 norm.
    RowsNormalize(VarId),
    /// (1/N) * trace of a square matrix.
    MeanDiag(VarId),
    /// (1/N) * sum_i log((1/N) * sum_k exp(X[i][k])), computed stably.
    MeanRowLogMeanExp(VarId),
    /// Row i of the output is the mean of the table rows listed in ids[i].
    PoolRows(VarId, Vec<Vec<usize>>),
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<VarId> {
        value.check_finite(name)?;
        self.nodes.push(Node { op, value });
        Ok(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Result<VarId> {
        self.push(Op::Leaf, value, "leaf")
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.ncols() != tb.nrows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.nrows(), ta.ncols(), tb.ncols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for l in 0..k {
                let av = ta.at(i, l);
                for j in 0..n {
                    out[i * n + j] += av * tb.at(l, j);
                }
            }
        }
        self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out)?, "matmul")
    }

    /// A * B^T, avoiding an explicit transpose.
    pub fn matmul_nt(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.ncols() != tb.ncols() {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, n) = (ta.nrows(), tb.nrows());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = crate::tensor::dot(ta.row(i), tb.row(j));
            }
        }
        self.push(Op::MatMulNT(a, b), Tensor::new(vec![m, n], out)?, "matmul_nt")
    }

    fn binary_same_shape(
        &mut self,
        a: VarId,
        b: VarId,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<VarId> {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        if !ta.same_shape(tb) {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(op, value, name)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        if ta.shape().len() != 2 || tb.len() != ta.ncols() {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let c = ta.ncols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(idx, v)| v + tb.data()[idx % c])
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(Op::AddRow(a, b), value, "add_row")
    }

    fn unary(
        &mut self,
        a: VarId,
        name: &'static str,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<VarId> {
        let ta = &self.nodes[a].value;
        let data = ta.data().iter().map(|x| f(*x)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(op, value, name)
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> Result<VarId> {
        self.unary(a, "scale", |x| x * c, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: VarId) -> Result<VarId> {
        self.unary(a, "neg", |x| -x, Op::Neg(a))
    }

    pub fn exp(&mut self, a: VarId) -> Result<VarId> {
        self.unary(a, "exp", f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: VarId) -> Result<VarId> {
        self.unary(a, "log", f64::ln, Op::Log(a))
    }

    pub fn tanh(&mut self, a: VarId) -> Result<VarId> {
        self.unary(a, "tanh", f64::tanh, Op::Tanh(a))
    }

    pub fn sum_all(&mut self, a: VarId) -> Result<VarId> {
        let s: f64 = self.nodes[a].value.data().iter().sum();
        self.push(Op::SumAll(a), Tensor::scalar(s), "sum_all")
    }

    pub fn mean_all(&mut self, a: VarId) -> Result<VarId> {
        let t = &self.nodes[a].value;
        let s: f64 = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Op::MeanAll(a), Tensor::scalar(s), "mean_all")
    }

    pub fn l2_norm_all(&mut self, a: VarId) -> Result<VarId> {
        let n = crate::tensor::l2_norm(self.nodes[a].value.data());
        self.push(Op::L2NormAll(a), Tensor::scalar(n), "l2_norm_all")
    }

    /// Divide each row of a 2-D tensor by its L2 norm. Zero rows are rejected:
    /// they signal a collapsed encoder.
    pub fn rows_normalize(&mut self, a: VarId) -> Result<VarId> {
        let ta = &self.nodes[a].value;
        let (m, c) = (ta.nrows(), ta.ncols());
        let mut data = Vec::with_capacity(m * c);
        for i in 0..m {
            let n = crate::tensor::l2_norm(ta.row(i));
            if n == 0.0 {
                return Err(Error::DegenerateEmbedding { row: i });
            }
            data.extend(ta.row(i).iter().map(|v| v / n));
        }
        let value = Tensor::new(vec![m, c], data)?;
        self.push(Op::RowsNormalize(a), value, "rows_normalize")
    }

    pub fn mean_diag(&mut self, a: VarId) -> Result<VarId> {
        let ta = &self.nodes[a].value;
        if ta.shape().len() != 2 || ta.nrows() != ta.ncols() {
            return Err(Error::ShapeMismatch {
                op: "mean_diag",
                lhs: ta.shape().to_vec(),
                rhs: ta.shape().to_vec(),
            });
        }
        let n = ta.nrows();
        let s: f64 = (0..n).map(|i| ta.at(i, i)).sum::<f64>() / n as f64;
        self.push(Op::MeanDiag(a), Tensor::scalar(s), "mean_diag")
    }

    /// (1/N) sum_i log((1/N) sum_k exp(X[i][k])). Row max is subtracted before
    /// exponentiation; with tau = 0.05 raw exponents reach e^20.
    pub fn mean_row_log_mean_exp(&mut self, a: VarId) -> Result<VarId> {
        let ta = &self.nodes[a].value;
        let (m, c) = (ta.nrows(), ta.ncols());
        let mut acc = 0.0;
        for i in 0..m {
            acc += row_log_mean_exp(ta.row(i));
        }
        let _ = c;
        self.push(
            Op::MeanRowLogMeanExp(a),
            Tensor::scalar(acc / m as f64),
            "mean_row_log_mean_exp",
        )
    }

    /// Mean-pool rows of an embedding table per token-id list.
    pub fn pool_rows(&mut self, table: VarId, ids: Vec<Vec<usize>>) -> Result<VarId> {
        let tt = &self.nodes[table].value;
        let (v, c) = (tt.nrows(), tt.ncols());
        let m = ids.len();
        let mut data = vec![0.0; m * c];
        for (i, sent) in ids.iter().enumerate() {
            if sent.is_empty() {
                return Err(Error::Input("empty token sequence".into()));
            }
            for &id in sent {
                if id >= v {
                    return Err(Error::Input(format!("token id {} out of range {}", id, v)));
                }
                for j in 0..c {
                    data[i * c + j] += tt.at(id, j);
                }
            }
            let inv = 1.0 / sent.len() as f64;
            for j in 0..c {
                data[i * c + j] *= inv;
            }
        }
        let value = Tensor::new(vec![m, c], data)?;
        self.push(Op::PoolRows(table, ids), value, "pool_rows")
    }

    /// Reverse sweep from a scalar loss node. Returns one gradient tensor per
    /// tape node (leaves included); accumulation is summation over all uses.
    pub fn backward(&mut self, loss: VarId) -> Result<Vec<Tensor>> {
        if !self.nodes[loss].value.is_scalar() {
            return Err(Error::Input(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss].value.shape()
            )));
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.shape().to_vec()))
            .collect();
        grads[loss].data_mut()[0] = 1.0;

        for id in (0..=loss).rev() {
            let g = grads[id].clone();
            if g.data().iter().all(|&v| v == 0.0) {
                continue;
            }
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (ta, tb) = (self.nodes[a].value.clone(), self.nodes[b].value.clone());
                    let (m, k, n) = (ta.nrows(), ta.ncols(), tb.ncols());
                    // dA = G B^T
                    for i in 0..m {
                        for l in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g.at(i, j) * tb.at(l, j);
                            }
                            grads[a].data_mut()[i * k + l] += s;
                        }
                    }
                    // dB = A^T G
                    for l in 0..k {
                        for j in 0..n {
                            let mut s = 0.0;
                            for i in 0..m {
                                s += ta.at(i, l) * g.at(i, j);
                            }
                            grads[b].data_mut()[l * n + j] += s;
                        }
                    }
                }
                Op::MatMulNT(a, b) => {
                    let (a, b) = (*a, *b);
                    let (ta, tb) = (self.nodes[a].value.clone(), self.nodes[b].value.clone());
                    let (m, n, k) = (ta.nrows(), tb.nrows(), ta.ncols());
                    // dA = G B
                    for i in 0..m {
                        for l in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g.at(i, j) * tb.at(j, l);
                            }
                            grads[a].data_mut()[i * k + l] += s;
                        }
                    }
                    // dB = G^T A
                    for j in 0..n {
                        for l in 0..k {
                            let mut s = 0.0;
                            for i in 0..m {
                                s += g.at(i, j) * ta.at(i, l);
                            }
                            grads[b].data_mut()[j * k + l] += s;
                        }
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut grads[a], g.data(), 1.0);
                    accumulate(&mut grads[b], g.data(), 1.0);
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut grads[a], g.data(), 1.0);
                    accumulate(&mut grads[b], g.data(), -1.0);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let tb = self.nodes[b].value.clone();
                    let ta = self.nodes[a].value.clone();
                    for (i, gv) in g.data().iter().enumerate() {
                        grads[a].data_mut()[i] += gv * tb.data()[i];
                        grads[b].data_mut()[i] += gv * ta.data()[i];
                    }
                }
                Op::AddRow(a, b) => {
                    let (a, b) = (*a, *b);
                    let c = self.nodes[a].value.ncols();
                    accumulate(&mut grads[a], g.data(), 1.0);
                    for (i, gv) in g.data().iter().enumerate() {
                        grads[b].data_mut()[i % c] += gv;
                    }
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    accumulate(&mut grads[a], g.data(), c);
                }
                Op::Neg(a) => {
                    let a = *a;
                    accumulate(&mut grads[a], g.data(), -1.0);
                }
                Op::Exp(a) => {
                    let a = *a;
                    let y = self.nodes[id].value.clone();
                    for (i, gv) in g.data().iter().enumerate() {
                        grads[a].data_mut()[i] += gv * y.data()[i];
                    }
                }
                Op::Log(a) => {
                    let a = *a;
                    let x = self.nodes[a].value.clone();
                    for (i, gv) in g.data().iter().enumerate() {
                        grads[a].data_mut()[i] += gv / x.data()[i];
                    }
                }
                Op::Tanh(a) => {
                    let a = *a;
                    let y = self.nodes[id].value.clone();
                    for (i, gv) in g.data().iter().enumerate() {
                        grads[a].data_mut()[i] += gv * (1.0 - y.data()[i] * y.data()[i]);
                    }
                }
                Op::SumAll(a) => {
                    let a = *a;
                    let gv = g.data()[0];
                    for slot in grads[a].data_mut() {
                        *slot += gv;
                    }
                }
                Op::MeanAll(a) => {
                    let a = *a;
                    let gv = g.data()[0] / self.nodes[a].value.len() as f64;
                    for slot in grads[a].data_mut() {
                        *slot += gv;
                    }
                }
                Op::L2NormAll(a) => {
                    let a = *a;
                    let norm = self.nodes[id].value.data()[0];
                    if norm > 0.0 {
                        let gv = g.data()[0] / norm;
                        let x = self.nodes[a].value.clone();
                        for (i, xv) in x.data().iter().enumerate() {
                            grads[a].data_mut()[i] += gv * xv;
                        }
                    }
                }
                Op::RowsNormalize(a) => {
                    let a = *a;
                    let x = self.nodes[a].value.clone();
                    let y = self.nodes[id].value.clone();
                    let (m, c) = (x.nrows(), x.ncols());
                    for i in 0..m {
                        let norm = crate::tensor::l2_norm(x.row(i));
                        let gy = &g.data()[i * c..(i + 1) * c];
                        let yi = y.row(i);
                        let gdoty = crate::tensor::dot(gy, yi);
                        for j in 0..c {
                            grads[a].data_mut()[i * c + j] += (gy[j] - gdoty * yi[j]) / norm;
                        }
                    }
                }
                Op::MeanDiag(a) => {
                    let a = *a;
                    let n = self.nodes[a].value.nrows();
                    let gv = g.data()[0] / n as f64;
                    for i in 0..n {
                        grads[a].data_mut()[i * n + i] += gv;
                    }
                }
                Op::MeanRowLogMeanExp(a) => {
                    let a = *a;
                    let x = self.nodes[a].value.clone();
                    let (m, c) = (x.nrows(), x.ncols());
                    let gv = g.data()[0] / m as f64;
                    for i in 0..m {
                        let row = x.row(i);
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
                        for j in 0..c {
                            let softmax = (row[j] - max).exp() / denom;
                            grads[a].data_mut()[i * c + j] += gv * softmax;
                        }
                    }
                }
                Op::PoolRows(table, ids) => {
                    let table = *table;
                    let ids = ids.clone();
                    let c = self.nodes[table].value.ncols();
                    for (i, sent) in ids.iter().enumerate() {
                        let inv = 1.0 / sent.len() as f64;
                        for &id_tok in sent {
                            for j in 0..c {
                                grads[table].data_mut()[id_tok * c + j] += g.at(i, j) * inv;
                            }
                        }
                    }
                }
            }
        }
        for gr in &grads {
            gr.check_finite("backward")?;
        }
        Ok(grads)
    }
}

/// Stable log((1/n) sum exp(x_k)).
pub fn row_log_mean_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row.iter().map(|v| (v - max).exp()).sum();
    max + (s / row.len() as f64).ln()
}

fn accumulate(dst: &mut Tensor, src: &[f64], factor: f64) {
    for (d, s) in dst.data_mut().iter_mut().zip(src) {
        *d += s * factor;
    }
}
