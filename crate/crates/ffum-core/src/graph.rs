//! Append-only computation graph with reverse-mode differentiation.
//!
//! A graph is rebuilt for every batch: ops append nodes that cache their
//! forward value, and `backward` replays the tape in reverse. Node ids are
//! indices into the tape, so topological order is construction order.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type NodeId = usize;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    MulScalar(NodeId, f64),
    Relu(NodeId),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId },
    SoftmaxRows(NodeId),
    Log(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SelectRows(NodeId, Vec<usize>),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradient of every node with respect to the backward root, indexed by
/// node id. Nodes the root does not depend on hold zeros.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> &Tensor {
        &self.grads[id]
    }

    pub fn take(&mut self, id: NodeId) -> Tensor {
        std::mem::replace(&mut self.grads[id], Tensor::zeros(vec![1]))
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    fn check(&self, id: NodeId, op: &'static str) -> Result<()> {
        if id >= self.nodes.len() {
            return Err(Error::Usage(format!("{op}: node id {id} does not exist")));
        }
        Ok(())
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Matrix product of two rank-2 nodes, `[n,k] x [k,m] -> [n,m]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a, "matmul")?;
        self.check(b, "matmul")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("{sa:?} x {sb:?}"),
            });
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(ta.data(), tb.data(), n, k, m);
        let value = Tensor::new(vec![n, m], out)?;
        Ok(self.push(Op::Matmul(a, b), value))
    }

    /// Elementwise sum. Also accepts a trailing-dim vector on the right,
    /// broadcast across rows (the bias pattern).
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a, "add")?;
        self.check(b, "add")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape().to_vec(), tb.shape().to_vec());
        let value = if sa == sb {
            let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
            Tensor::new(sa, data)?
        } else {
            let (rows, cols) = ta.row_shape();
            if sb.len() != 1 || sb[0] != cols {
                return Err(Error::ShapeMismatch {
                    op: "add",
                    detail: format!("{sa:?} + {sb:?}"),
                });
            }
            let bvec = tb.data();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for (x, y) in ta.row(r).iter().zip(bvec) {
                    data.push(x + y);
                }
            }
            Tensor::new(sa, data)?
        };
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn mul_scalar(&mut self, x: NodeId, s: f64) -> Result<NodeId> {
        self.check(x, "mul_scalar")?;
        if !s.is_finite() {
            return Err(Error::non_finite("mul_scalar coefficient"));
        }
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * s).collect())?;
        Ok(self.push(Op::MulScalar(x, s), value))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x, "relu")?;
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.max(0.0)).collect())?;
        Ok(self.push(Op::Relu(x), value))
    }

    /// Layer normalization over the last axis with learnable gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check(x, "layer_norm")?;
        self.check(gain, "layer_norm")?;
        self.check(bias, "layer_norm")?;
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let (rows, cols) = tx.row_shape();
        if tg.shape() != [cols] || tb.shape() != [cols] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                detail: format!(
                    "input {:?} with gain {:?} and bias {:?}",
                    tx.shape(),
                    tg.shape(),
                    tb.shape()
                ),
            });
        }
        let (g, b) = (tg.data(), tb.data());
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = tx.row(r);
            let (mean, var) = mean_var(row);
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for j in 0..cols {
                data.push(g[j] * (row[j] - mean) * inv + b[j]);
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(Op::LayerNorm { x, gain, bias }, value))
    }

    /// Row-wise softmax, numerically stabilized by subtracting the row max.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x, "softmax_rows")?;
        let t = self.value(x);
        let (rows, cols) = t.row_shape();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            data.extend_from_slice(&softmax(t.row(r)));
        }
        let _ = cols;
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(Op::SoftmaxRows(x), value))
    }

    /// Natural log, elementwise. Non-positive inputs surface as a
    /// non-finite error rather than silent NaN.
    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x, "log")?;
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.ln()).collect())?;
        Ok(self.push(Op::Log(x), value))
    }

    /// Full reduction to a scalar node of shape `[1]`.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x, "sum")?;
        let s: f64 = self.value(x).data().iter().sum();
        let value = Tensor::scalar(s)?;
        Ok(self.push(Op::Sum(x), value))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x, "mean")?;
        let t = self.value(x);
        let s: f64 = t.data().iter().sum();
        let value = Tensor::scalar(s / t.numel() as f64)?;
        Ok(self.push(Op::Mean(x), value))
    }

    /// Row selection by explicit indices; duplicates are allowed and
    /// accumulate gradient.
    pub fn select_rows(&mut self, x: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        self.check(x, "select_rows")?;
        if indices.is_empty() {
            return Err(Error::Usage("select_rows needs at least one index".into()));
        }
        let value = self.value(x).select_rows(&indices)?;
        Ok(self.push(Op::SelectRows(x, indices), value))
    }

    /// Backpropagate from a scalar root. The root's own gradient is seeded
    /// with ones of its shape.
    pub fn backward(&mut self, root: NodeId) -> Result<Gradients> {
        self.check(root, "backward")?;
        if !self.value(root).is_scalar() {
            return Err(Error::Usage(format!(
                "backward root must be scalar-shaped, got {:?}",
                self.value(root).shape()
            )));
        }
        let seed = Tensor::scalar(1.0)?;
        self.backward_from(root, seed)
    }

    /// Backpropagate an explicit output gradient seeded at `node`. This is
    /// how analytic loss gradients at the logits are pushed through the
    /// network.
    pub fn backward_from(&mut self, node: NodeId, seed: Tensor) -> Result<Gradients> {
        self.check(node, "backward_from")?;
        if seed.shape() != self.value(node).shape() {
            return Err(Error::ShapeMismatch {
                op: "backward_from",
                detail: format!(
                    "seed {:?} vs node value {:?}",
                    seed.shape(),
                    self.value(node).shape()
                ),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[node] = Some(seed.data().to_vec());

        for id in (0..=node).rev() {
            let Some(out_grad) = grads[id].take() else { continue };
            self.propagate(id, &out_grad, &mut grads)?;
            grads[id] = Some(out_grad);
        }

        let mut table = Vec::with_capacity(self.nodes.len());
        for (id, slot) in grads.into_iter().enumerate() {
            let shape = self.value(id).shape().to_vec();
            match slot {
                Some(data) => table.push(Tensor::new(shape, data).map_err(|_| {
                    Error::non_finite(format!("gradient of node {id} after backward"))
                })?),
                None => table.push(Tensor::zeros(shape)),
            }
        }
        Ok(Gradients { grads: table })
    }

    fn propagate(
        &self,
        id: NodeId,
        out_grad: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        let add_to = |grads: &mut [Option<Vec<f64>>], target: NodeId, numel: usize, f: &mut dyn FnMut(&mut [f64])| {
            let slot = grads[target].get_or_insert_with(|| vec![0.0; numel]);
            f(slot);
        };

        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k) = (ta.shape()[0], ta.shape()[1]);
                let m = tb.shape()[1];
                // dA = dC . B^T ; dB = A^T . dC
                let da = matmul_nt(out_grad, tb.data(), n, m, k);
                let db = matmul_tn(ta.data(), out_grad, n, k, m);
                add_to(grads, *a, n * k, &mut |s| axpy_into(s, &da));
                add_to(grads, *b, k * m, &mut |s| axpy_into(s, &db));
            }
            Op::Add(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                add_to(grads, *a, ta.numel(), &mut |s| axpy_into(s, out_grad));
                if ta.shape() == tb.shape() {
                    add_to(grads, *b, tb.numel(), &mut |s| axpy_into(s, out_grad));
                } else {
                    // Row-broadcast bias: gradient is the column sum.
                    let (rows, cols) = ta.row_shape();
                    add_to(grads, *b, cols, &mut |s| {
                        for r in 0..rows {
                            for j in 0..cols {
                                s[j] += out_grad[r * cols + j];
                            }
                        }
                    });
                }
            }
            Op::MulScalar(x, s) => {
                let numel = self.value(*x).numel();
                let coeff = *s;
                add_to(grads, *x, numel, &mut |slot| {
                    for (g, d) in slot.iter_mut().zip(out_grad) {
                        *g += coeff * d;
                    }
                });
            }
            Op::Relu(x) => {
                let tx = self.value(*x);
                add_to(grads, *x, tx.numel(), &mut |slot| {
                    for (i, (g, v)) in slot.iter_mut().zip(tx.data()).enumerate() {
                        if *v > 0.0 {
                            *g += out_grad[i];
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias } => {
                let (tx, tg) = (self.value(*x), self.value(*gain));
                let (rows, cols) = tx.row_shape();
                let g = tg.data();
                let mut dx = vec![0.0; rows * cols];
                let mut dgain = vec![0.0; cols];
                let mut dbias = vec![0.0; cols];
                for r in 0..rows {
                    let row = tx.row(r);
                    let dy = &out_grad[r * cols..(r + 1) * cols];
                    let (mean, var) = mean_var(row);
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    let mut dxh = vec![0.0; cols];
                    let mut xh = vec![0.0; cols];
                    for j in 0..cols {
                        xh[j] = (row[j] - mean) * inv;
                        dxh[j] = dy[j] * g[j];
                        dgain[j] += dy[j] * xh[j];
                        dbias[j] += dy[j];
                    }
                    let m = cols as f64;
                    let mean_dxh: f64 = dxh.iter().sum::<f64>() / m;
                    let mean_dxh_xh: f64 =
                        dxh.iter().zip(&xh).map(|(a, b)| a * b).sum::<f64>() / m;
                    for j in 0..cols {
                        dx[r * cols + j] = inv * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
                    }
                }
                add_to(grads, *x, rows * cols, &mut |s| axpy_into(s, &dx));
                add_to(grads, *gain, cols, &mut |s| axpy_into(s, &dgain));
                add_to(grads, *bias, cols, &mut |s| axpy_into(s, &dbias));
            }
            Op::SoftmaxRows(x) => {
                let out = self.value(id);
                let (rows, cols) = out.row_shape();
                let numel = self.value(*x).numel();
                add_to(grads, *x, numel, &mut |slot| {
                    for r in 0..rows {
                        let p = out.row(r);
                        let dy = &out_grad[r * cols..(r + 1) * cols];
                        let dot: f64 = p.iter().zip(dy).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            slot[r * cols + j] += p[j] * (dy[j] - dot);
                        }
                    }
                });
            }
            Op::Log(x) => {
                let tx = self.value(*x);
                add_to(grads, *x, tx.numel(), &mut |slot| {
                    for (i, (g, v)) in slot.iter_mut().zip(tx.data()).enumerate() {
                        *g += out_grad[i] / v;
                    }
                });
            }
            Op::Sum(x) => {
                let numel = self.value(*x).numel();
                let d = out_grad[0];
                add_to(grads, *x, numel, &mut |slot| {
                    for g in slot.iter_mut() {
                        *g += d;
                    }
                });
            }
            Op::Mean(x) => {
                let numel = self.value(*x).numel();
                let d = out_grad[0] / numel as f64;
                add_to(grads, *x, numel, &mut |slot| {
                    for g in slot.iter_mut() {
                        *g += d;
                    }
                });
            }
            Op::SelectRows(x, indices) => {
                let tx = self.value(*x);
                let (_, cols) = tx.row_shape();
                add_to(grads, *x, tx.numel(), &mut |slot| {
                    for (pos, &src) in indices.iter().enumerate() {
                        for j in 0..cols {
                            slot[src * cols + j] += out_grad[pos * cols + j];
                        }
                    }
                });
            }
        }
        Ok(())
    }
}

/// Stable softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn mean_var(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

fn axpy_into(acc: &mut [f64], delta: &[f64]) {
    for (a, d) in acc.iter_mut().zip(delta) {
        *a += d;
    }
}

/// C[n,m] = A[n,k] . B[k,m]
fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            let crow = &mut c[i * m..(i + 1) * m];
            for j in 0..m {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// C[n,k] = A[n,m] . B[k,m]^T
fn matmul_nt(a: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * k];
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        for j in 0..k {
            let brow = &b[j * m..(j + 1) * m];
            c[i * k + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// C[k,m] = A[n,k]^T . B[n,m]
fn matmul_tn(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * m];
    for i in 0..n {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[i * m..(i + 1) * m];
            let crow = &mut c[p * m..(p + 1) * m];
            for j in 0..m {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}
