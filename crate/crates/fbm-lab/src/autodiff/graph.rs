//! Dynamic tape for reverse-mode differentiation.
//!
//! A [`Graph`] is rebuilt per minibatch: leaves go in first, every op appends a
//! node (so node order is already topological), and [`Graph::backward`] walks
//! the tape in reverse. Gradients only propagate into nodes that require them,
//! so target networks bound as non-trainable leaves keep exactly-zero
//! gradients.

use super::tensor::Tensor;
use crate::error::{FbmError, Result};

/// Handle to a node in a [`Graph`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Matmul(Var, Var),
    /// Elementwise add; rhs may be a 1xC row broadcast over lhs rows.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Square(Var),
    SumAll(Var),
    MeanAll(Var),
    RowSum(Var),
    /// Rescale every row to the target Euclidean norm.
    RowL2Norm(Var, f64),
    /// RMS normalization with learned gain (1xC), bias-free.
    RmsNorm(Var, Var),
    Transpose(Var),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Gradients produced by one backward pass, keyed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

const RMS_EPS: f64 = 1e-8;
const NORM_EPS: f64 = 1e-24;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Inserts a leaf. `requires_grad` marks it as a gradient sink.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, rg, Op::Matmul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let value = if tb.rows() == 1 && ta.rows() > 1 && ta.cols() == tb.cols() {
            // broadcast row over all rows of a
            let mut out = ta.clone();
            for r in 0..out.rows() {
                for c in 0..out.cols() {
                    let v = out.get(r, c) + tb.get(0, c);
                    out.set(r, c, v);
                }
            }
            out
        } else {
            assert_eq!(
                ta.shape(),
                tb.shape(),
                "shape mismatch in add: lhs {}x{}, rhs {}x{}",
                ta.rows(),
                ta.cols(),
                tb.rows(),
                tb.cols()
            );
            ta.add(tb)
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(value, rg, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(
            ta.shape(),
            tb.shape(),
            "shape mismatch in sub: lhs {}x{}, rhs {}x{}",
            ta.rows(),
            ta.cols(),
            tb.rows(),
            tb.cols()
        );
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x - y)
            .collect();
        let value = Tensor::from_vec(ta.rows(), ta.cols(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, rg, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(
            ta.shape(),
            tb.shape(),
            "shape mismatch in mul: lhs {}x{}, rhs {}x{}",
            ta.rows(),
            ta.cols(),
            tb.rows(),
            tb.cols()
        );
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::from_vec(ta.rows(), ta.cols(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, rg, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(value, rg, Op::Scale(a, s))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut at = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(
                t.rows(),
                rows,
                "shape mismatch in concat: expected {rows} rows, got {}x{}",
                t.rows(),
                t.cols()
            );
            for r in 0..rows {
                let src = t.row(r);
                out.row_mut(r)[at..at + src.len()].copy_from_slice(src);
            }
            at += t.cols();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, rg, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let t = self.value(a);
        assert!(
            start < end && end <= t.cols(),
            "slice [{start}, {end}) out of range for {}x{}",
            t.rows(),
            t.cols()
        );
        let mut out = Tensor::zeros(t.rows(), end - start);
        for r in 0..t.rows() {
            out.row_mut(r).copy_from_slice(&t.row(r)[start..end]);
        }
        let rg = self.rg(a);
        self.push(out, rg, Op::SliceCols(a, start, end))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(value, rg, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        let rg = self.rg(a);
        self.push(value, rg, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(value, rg, Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(value, rg, Op::Square(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), rg, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s: f64 = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), rg, Op::MeanAll(a))
    }

    /// Row-wise sum: NxC -> Nx1.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::from_fn(t.rows(), 1, |r, _| t.row(r).iter().sum());
        let rg = self.rg(a);
        self.push(out, rg, Op::RowSum(a))
    }

    /// Row-wise dot product of two NxC tensors -> Nx1.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let prod = self.mul(a, b);
        self.row_sum(prod)
    }

    /// Rescales every row of `a` to Euclidean norm `target`. Zero rows stay zero.
    pub fn row_l2_normalize(&mut self, a: Var, target: f64) -> Var {
        let t = self.value(a);
        let mut out = t.clone();
        for r in 0..t.rows() {
            let norm = (t.row(r).iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt();
            for v in out.row_mut(r) {
                *v *= target / norm;
            }
        }
        let rg = self.rg(a);
        self.push(out, rg, Op::RowL2Norm(a, target))
    }

    /// Bias-free RMS normalization with learned gain (1xC row).
    pub fn rms_norm(&mut self, a: Var, gain: Var) -> Var {
        let t = self.value(a);
        let g = self.value(gain);
        assert_eq!(
            (g.rows(), g.cols()),
            (1, t.cols()),
            "shape mismatch in rms_norm: input {}x{}, gain {}x{}",
            t.rows(),
            t.cols(),
            g.rows(),
            g.cols()
        );
        let c = t.cols() as f64;
        let mut out = Tensor::zeros(t.rows(), t.cols());
        for r in 0..t.rows() {
            let rms = (t.row(r).iter().map(|v| v * v).sum::<f64>() / c + RMS_EPS).sqrt();
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = g.get(0, j) * t.get(r, j) / rms;
            }
        }
        let rg = self.rg(a) || self.rg(gain);
        self.push(out, rg, Op::RmsNorm(a, gain))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, rg, Op::Transpose(a))
    }

    /// Selects rows of `a` by index (duplicates allowed).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(indices.len(), t.cols());
        for (r, &i) in indices.iter().enumerate() {
            assert!(
                i < t.rows(),
                "gather index {i} out of range for {}x{}",
                t.rows(),
                t.cols()
            );
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        let rg = self.rg(a);
        self.push(out, rg, Op::GatherRows(a, indices.to_vec()))
    }

    /// Reinterprets `a` with a new shape of the same element count.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let t = self.value(a);
        assert_eq!(
            t.len(),
            rows * cols,
            "reshape of {}x{} to {rows}x{cols}",
            t.rows(),
            t.cols()
        );
        let value = Tensor::from_vec(rows, cols, t.data().to_vec());
        let rg = self.rg(a);
        self.push(value, rg, Op::Reshape(a))
    }

    /// Reverse-mode sweep from a scalar loss. Repeated calls over the same
    /// graph are deterministic; each call starts from cleared buffers.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.shape() != (1, 1) {
            return Err(FbmError::contract(format!(
                "backward requires a scalar loss, got {}x{}",
                lt.rows(),
                lt.cols()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(gout) = grads[id].take() else {
                continue;
            };
            self.propagate(id, &gout, &mut grads);
            grads[id] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                debug_assert_eq!(g.shape(), delta.shape());
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, id: usize, gout: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    self.accumulate(grads, *a, gout.matmul(&tb.transpose()));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, ta.transpose().matmul(gout));
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, gout.clone());
                }
                if self.rg(*b) {
                    let tb = self.value(*b);
                    if tb.rows() == 1 && gout.rows() > 1 {
                        // bias broadcast: gradient is the column sum
                        let mut db = Tensor::zeros(1, tb.cols());
                        for r in 0..gout.rows() {
                            for c in 0..gout.cols() {
                                let v = db.get(0, c) + gout.get(r, c);
                                db.set(0, c, v);
                            }
                        }
                        self.accumulate(grads, *b, db);
                    } else {
                        self.accumulate(grads, *b, gout.clone());
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, gout.clone());
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, gout.scale(-1.0));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let d = Tensor::from_vec(
                        gout.rows(),
                        gout.cols(),
                        gout.data()
                            .iter()
                            .zip(tb.data())
                            .map(|(g, y)| g * y)
                            .collect(),
                    );
                    self.accumulate(grads, *a, d);
                }
                if self.rg(*b) {
                    let d = Tensor::from_vec(
                        gout.rows(),
                        gout.cols(),
                        gout.data()
                            .iter()
                            .zip(ta.data())
                            .map(|(g, x)| g * x)
                            .collect(),
                    );
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Scale(a, s) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, gout.scale(*s));
                }
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    if self.rg(p) {
                        let mut d = Tensor::zeros(gout.rows(), cols);
                        for r in 0..gout.rows() {
                            d.row_mut(r).copy_from_slice(&gout.row(r)[at..at + cols]);
                        }
                        self.accumulate(grads, p, d);
                    }
                    at += cols;
                }
            }
            Op::SliceCols(a, start, _end) => {
                if self.rg(*a) {
                    let ta = self.value(*a);
                    let mut d = Tensor::zeros(ta.rows(), ta.cols());
                    for r in 0..gout.rows() {
                        d.row_mut(r)[*start..*start + gout.cols()].copy_from_slice(gout.row(r));
                    }
                    self.accumulate(grads, *a, d);
                }
            }
            Op::Tanh(a) => {
                if self.rg(*a) {
                    let y = &self.nodes[id].value;
                    let d = Tensor::from_vec(
                        y.rows(),
                        y.cols(),
                        gout.data()
                            .iter()
                            .zip(y.data())
                            .map(|(g, y)| g * (1.0 - y * y))
                            .collect(),
                    );
                    self.accumulate(grads, *a, d);
                }
            }
            Op::Sigmoid(a) => {
                if self.rg(*a) {
                    let y = &self.nodes[id].value;
                    let d = Tensor::from_vec(
                        y.rows(),
                        y.cols(),
                        gout.data()
                            .iter()
                            .zip(y.data())
                            .map(|(g, y)| g * y * (1.0 - y))
                            .collect(),
                    );
                    self.accumulate(grads, *a, d);
                }
            }
            Op::Relu(a) => {
                if self.rg(*a) {
                    let x = self.value(*a);
                    let d = Tensor::from_vec(
                        x.rows(),
                        x.cols(),
                        gout.data()
                            .iter()
                            .zip(x.data())
                            .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                            .collect(),
                    );
                    self.accumulate(grads, *a, d);
                }
            }
            Op::Square(a) => {
                if self.rg(*a) {
                    let x = self.value(*a);
                    let d = Tensor::from_vec(
                        x.rows(),
                        x.cols(),
                        gout.data()
                            .iter()
                            .zip(x.data())
                            .map(|(g, x)| g * 2.0 * x)
                            .collect(),
                    );
                    self.accumulate(grads, *a, d);
                }
            }
            Op::SumAll(a) => {
                if self.rg(*a) {
                    let ta = self.value(*a);
                    self.accumulate(grads, *a, Tensor::filled(ta.rows(), ta.cols(), gout.item()));
                }
            }
            Op::MeanAll(a) => {
                if self.rg(*a) {
                    let ta = self.value(*a);
                    let g = gout.item() / ta.len() as f64;
                    self.accumulate(grads, *a, Tensor::filled(ta.rows(), ta.cols(), g));
                }
            }
            Op::RowSum(a) => {
                if self.rg(*a) {
                    let ta = self.value(*a);
                    let d = Tensor::from_fn(ta.rows(), ta.cols(), |r, _| gout.get(r, 0));
                    self.accumulate(grads, *a, d);
                }
            }
            Op::RowL2Norm(a, target) => {
                if self.rg(*a) {
                    let x = self.value(*a);
                    let mut d = Tensor::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        let norm = (x.row(r).iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt();
                        let s: f64 = gout
                            .row(r)
                            .iter()
                            .zip(x.row(r))
                            .map(|(g, xv)| g * xv)
                            .sum();
                        for (j, dv) in d.row_mut(r).iter_mut().enumerate() {
                            *dv = target / norm * gout.get(r, j)
                                - target * s / (norm * norm * norm) * x.get(r, j);
                        }
                    }
                    self.accumulate(grads, *a, d);
                }
            }
            Op::RmsNorm(a, gain) => {
                let x = self.value(*a);
                let g = self.value(*gain);
                let c = x.cols() as f64;
                if self.rg(*a) {
                    let mut d = Tensor::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        let rms = (x.row(r).iter().map(|v| v * v).sum::<f64>() / c + RMS_EPS).sqrt();
                        let s: f64 = (0..x.cols())
                            .map(|j| gout.get(r, j) * g.get(0, j) * x.get(r, j))
                            .sum();
                        for j in 0..x.cols() {
                            let v = gout.get(r, j) * g.get(0, j) / rms
                                - x.get(r, j) * s / (c * rms * rms * rms);
                            d.set(r, j, v);
                        }
                    }
                    self.accumulate(grads, *a, d);
                }
                if self.rg(*gain) {
                    let mut d = Tensor::zeros(1, x.cols());
                    for r in 0..x.rows() {
                        let rms = (x.row(r).iter().map(|v| v * v).sum::<f64>() / c + RMS_EPS).sqrt();
                        for j in 0..x.cols() {
                            let v = d.get(0, j) + gout.get(r, j) * x.get(r, j) / rms;
                            d.set(0, j, v);
                        }
                    }
                    self.accumulate(grads, *gain, d);
                }
            }
            Op::Transpose(a) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, gout.transpose());
                }
            }
            Op::GatherRows(a, indices) => {
                if self.rg(*a) {
                    let ta = self.value(*a);
                    let mut d = Tensor::zeros(ta.rows(), ta.cols());
                    for (r, &i) in indices.iter().enumerate() {
                        for (dst, src) in d.row_mut(i).iter_mut().zip(gout.row(r)) {
                            *dst += src;
                        }
                    }
                    self.accumulate(grads, *a, d);
                }
            }
            Op::Reshape(a) => {
                if self.rg(*a) {
                    let ta = self.value(*a);
                    let d = Tensor::from_vec(ta.rows(), ta.cols(), gout.data().to_vec());
                    self.accumulate(grads, *a, d);
                }
            }
        }
    }
}
