//! Tape-based reverse-mode differentiation over a fixed set of matrix ops.
//!
//! Every op appends a node holding its value; node inputs always precede the
//! node, so a single reverse sweep in [`Tape::backward`] visits nodes in a
//! valid order. Nodes that do not depend on any parameter carry no adjoint.
//!
//! ```
//! use ngcn::{DenseMatrix, Tape};
//!
//! let mut tape = Tape::new();
//! let w = tape.param(DenseMatrix::from_rows(&[[1.0, -2.0]]));
//! let loss = tape.sum_squares(w);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w), DenseMatrix::from_rows(&[[2.0, -4.0]]));
//! ```

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::SparseMatrix;
use crate::rng::Rng;
use crate::tensor::{log_sum_exp, softmax_in_place, DenseMatrix, SparseRows};

/// Floor applied to row norms in [`Tape::l2_normalize_rows`].
pub const L2_NORM_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Param,
    Constant,
    MatMul(Var, Var),
    SpMM(Arc<SparseMatrix>, Var),
    /// Constant sparse left factor times a dense node.
    SparseMatMul(Arc<SparseRows>, Var),
    Relu(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    RowSlice(Var, usize),
    L2NormalizeRows(Var),
    /// Per-entry multipliers: 0 for dropped entries, `1 / (1 - rate)` otherwise.
    Dropout(Var, Vec<f64>),
    Add(Var, Var),
    Scale(Var, f64),
    Ln(Var),
    WeightedSum { weights: Var, parts: Vec<Var> },
    SumSquares(Var),
    Sum(Var),
    MaskedSoftmaxCe { logits: Var, labels: Var, rows: Arc<[usize]> },
    MaskedSigmoidCe { logits: Var, labels: Var, rows: Arc<[usize]> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Arc<DenseMatrix>,
    requires_grad: bool,
}

/// A recorded computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: DenseMatrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Arc::new(value),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: DenseMatrix) -> Var {
        self.push(Op::Param, value, true)
    }

    /// A non-trainable leaf.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(Op::Constant, value, false)
    }

    /// A non-trainable leaf sharing an existing allocation.
    pub fn constant_shared(&mut self, value: Arc<DenseMatrix>) -> Var {
        self.nodes.push(Node {
            op: Op::Constant,
            value,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.as_slice()[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::MatMul(a, b), value, rg))
    }

    pub fn spmm(&mut self, s: &Arc<SparseMatrix>, h: Var) -> Result<Var> {
        let value = s.spmm(self.value(h))?;
        let rg = self.requires(h);
        Ok(self.push(Op::SpMM(Arc::clone(s), h), value, rg))
    }

    /// `x · w` for a constant sparse `x` (typically dropped-out features).
    pub fn sparse_matmul(&mut self, x: &Arc<SparseRows>, w: Var) -> Result<Var> {
        let value = x.matmul(self.value(w))?;
        let rg = self.requires(w);
        Ok(self.push(Op::SparseMatMul(Arc::clone(x), w), value, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.requires(x);
        self.push(Op::Relu(x), value, rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for i in 0..value.rows() {
            softmax_in_place(value.row_mut(i));
        }
        let rg = self.requires(x);
        self.push(Op::SoftmaxRows(x), value, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let value = {
            let refs: Vec<&DenseMatrix> = parts.iter().map(|&p| self.value(p)).collect();
            DenseMatrix::concat_cols(&refs)?
        };
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value, rg))
    }

    /// Rows `start..start + len` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let input = self.value(x);
        if start + len > input.rows() {
            return Err(Error::config(format!(
                "slice_rows: rows {start}..{} of a {}-row matrix",
                start + len,
                input.rows()
            )));
        }
        let rows: Vec<usize> = (start..start + len).collect();
        let value = input.select_rows(&rows);
        let rg = self.requires(x);
        Ok(self.push(Op::RowSlice(x, start), value, rg))
    }

    /// Divides each row by `max(‖row‖₂, 1e-12)`; zero rows stay zero.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(L2_NORM_EPS);
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        let rg = self.requires(x);
        self.push(Op::L2NormalizeRows(x), value, rg)
    }

    /// Inverted dropout.
    ///
    /// Outside training, or with `rate == 0`, returns `x` itself. In training
    /// each nonzero entry is kept with probability `1 - rate` and scaled by
    /// `1 / (1 - rate)`; zero entries draw nothing and stay zero, so sparse
    /// inputs cost one draw per stored value.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut Rng, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let input = self.value(x);
        let mut mask = vec![0.0; input.len()];
        let mut value = DenseMatrix::zeros(input.rows(), input.cols());
        for ((m, out), &v) in mask
            .iter_mut()
            .zip(value.as_mut_slice())
            .zip(input.as_slice())
        {
            if v != 0.0 && !rng.bernoulli(rate) {
                *m = keep_scale;
                *out = v * keep_scale;
            }
        }
        let rg = self.requires(x);
        Ok(self.push(Op::Dropout(x, mask), value, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).scale(factor);
        let rg = self.requires(x);
        self.push(Op::Scale(x, factor), value, rg)
    }

    /// Elementwise natural logarithm of `max(x, f64::MIN_POSITIVE)`.
    pub fn ln(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(f64::MIN_POSITIVE).ln());
        let rg = self.requires(x);
        self.push(Op::Ln(x), value, rg)
    }

    /// `Σ_j w_j · parts[j]` where `weights` is a `1 x J` row.
    pub fn weighted_sum(&mut self, weights: Var, parts: &[Var]) -> Result<Var> {
        let w = self.value(weights);
        if w.rows() != 1 || w.cols() != parts.len() {
            return Err(Error::config(format!(
                "weighted_sum: weights {:?} for {} parts",
                w.shape(),
                parts.len()
            )));
        }
        let Some(&first) = parts.first() else {
            return Err(Error::config("weighted_sum: no parts"));
        };
        let shape = self.value(first).shape();
        let mut value = DenseMatrix::zeros(shape.0, shape.1);
        for (j, &p) in parts.iter().enumerate() {
            let part = self.value(p);
            if part.shape() != shape {
                return Err(Error::config(format!(
                    "weighted_sum: part {j} has shape {:?}, expected {shape:?}",
                    part.shape()
                )));
            }
            let wj = w.as_slice()[j];
            for (o, &x) in value.as_mut_slice().iter_mut().zip(part.as_slice()) {
                *o += wj * x;
            }
        }
        let rg = self.requires(weights) || parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            Op::WeightedSum {
                weights,
                parts: parts.to_vec(),
            },
            value,
            rg,
        ))
    }

    /// `Σ x²` as a 1x1 node.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let value = DenseMatrix::scalar(self.value(x).sum_squares());
        let rg = self.requires(x);
        self.push(Op::SumSquares(x), value, rg)
    }

    /// `Σ x` as a 1x1 node.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = DenseMatrix::scalar(self.value(x).sum());
        let rg = self.requires(x);
        self.push(Op::Sum(x), value, rg)
    }

    fn loss_rows(&self, logits: Var, labels: Var, mask: &[bool], what: &str) -> Result<Arc<[usize]>> {
        let (l, y) = (self.value(logits), self.value(labels));
        if l.shape() != y.shape() {
            return Err(Error::config(format!(
                "{what}: logits {:?} vs labels {:?}",
                l.shape(),
                y.shape()
            )));
        }
        if mask.len() != l.rows() {
            return Err(Error::config(format!(
                "{what}: mask has {} entries for {} rows",
                mask.len(),
                l.rows()
            )));
        }
        let rows: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        if rows.is_empty() {
            return Err(Error::config(format!("{what}: mask selects no rows")));
        }
        Ok(rows.into())
    }

    /// Mean over masked rows of `-Σ_c Y_ic · log softmax(logits)_ic`.
    pub fn masked_softmax_ce(&mut self, logits: Var, labels: Var, mask: &[bool]) -> Result<Var> {
        let rows = self.loss_rows(logits, labels, mask, "masked_softmax_ce")?;
        let (l, y) = (self.value(logits), self.value(labels));
        let mut total = 0.0;
        for &i in rows.iter() {
            let lse = log_sum_exp(l.row(i));
            total += l
                .row(i)
                .iter()
                .zip(y.row(i))
                .filter(|(_, &t)| t != 0.0)
                .map(|(&x, &t)| -t * (x - lse))
                .sum::<f64>();
        }
        let value = DenseMatrix::scalar(total / rows.len() as f64);
        let rg = self.requires(logits);
        Ok(self.push(
            Op::MaskedSoftmaxCe {
                logits,
                labels,
                rows,
            },
            value,
            rg,
        ))
    }

    /// Mean over masked rows and all columns of binary cross-entropy on
    /// sigmoid(logits).
    pub fn masked_sigmoid_ce(&mut self, logits: Var, labels: Var, mask: &[bool]) -> Result<Var> {
        let rows = self.loss_rows(logits, labels, mask, "masked_sigmoid_ce")?;
        let (l, y) = (self.value(logits), self.value(labels));
        let mut total = 0.0;
        for &i in rows.iter() {
            for (&x, &t) in l.row(i).iter().zip(y.row(i)) {
                // -[t log σ(x) + (1 - t) log(1 - σ(x))] = max(x, 0) - t x + log(1 + e^{-|x|})
                total += x.max(0.0) - t * x + (-x.abs()).exp().ln_1p();
            }
        }
        let value = DenseMatrix::scalar(total / (rows.len() * l.cols()) as f64);
        let rg = self.requires(logits);
        Ok(self.push(
            Op::MaskedSigmoidCe {
                logits,
                labels,
                rows,
            },
            value,
            rg,
        ))
    }

    /// Reverse sweep from a 1x1 `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::config(format!("backward: loss has shape {shape:?}, expected (1, 1)")));
        }
        let mut grads: Vec<Option<DenseMatrix>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.requires(loss) {
            grads[loss.0] = Some(DenseMatrix::scalar(1.0));
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<DenseMatrix>], v: Var, g: DenseMatrix) -> Result<()> {
        if !self.requires(v) {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Param | Op::Constant => {}
            Op::MatMul(a, b) => {
                if self.requires(*a) {
                    let da = g.matmul_t(self.value(*b))?;
                    self.accumulate(grads, *a, da)?;
                }
                if self.requires(*b) {
                    let db = self.value(*a).t_matmul(g)?;
                    self.accumulate(grads, *b, db)?;
                }
            }
            Op::SpMM(s, h) => {
                let dh = s.spmm_transpose(g)?;
                self.accumulate(grads, *h, dh)?;
            }
            Op::SparseMatMul(x, w) => {
                let dw = x.t_matmul(g)?;
                self.accumulate(grads, *w, dw)?;
            }
            Op::Relu(x) => {
                let x_val = self.value(*x);
                let mut dx = g.clone();
                for (d, &v) in dx.as_mut_slice().iter_mut().zip(x_val.as_slice()) {
                    if v <= 0.0 {
                        *d = 0.0;
                    }
                }
                self.accumulate(grads, *x, dx)?;
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let mut dx = DenseMatrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, &yv), &gv) in dx.row_mut(i).iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *x, dx)?;
            }
            Op::ConcatCols(parts) => {
                let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
                for (p, dp) in parts.iter().zip(g.split_cols(&widths)?) {
                    self.accumulate(grads, *p, dp)?;
                }
            }
            Op::RowSlice(x, start) => {
                let x_val = self.value(*x);
                let mut dx = DenseMatrix::zeros(x_val.rows(), x_val.cols());
                for i in 0..g.rows() {
                    dx.row_mut(start + i).copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *x, dx)?;
            }
            Op::L2NormalizeRows(x) => {
                let (x_val, y) = (self.value(*x), &node.value);
                let mut dx = DenseMatrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let norm = x_val.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                    let (yr, gr) = (y.row(i), g.row(i));
                    if norm > L2_NORM_EPS {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, &yv), &gv) in dx.row_mut(i).iter_mut().zip(yr).zip(gr) {
                            *d = (gv - yv * dot) / norm;
                        }
                    } else {
                        // Clamped branch: y = x / eps is linear in x.
                        for (d, &gv) in dx.row_mut(i).iter_mut().zip(gr) {
                            *d = gv / L2_NORM_EPS;
                        }
                    }
                }
                self.accumulate(grads, *x, dx)?;
            }
            Op::Dropout(x, mask) => {
                let mut dx = g.clone();
                for (d, &m) in dx.as_mut_slice().iter_mut().zip(mask) {
                    *d *= m;
                }
                self.accumulate(grads, *x, dx)?;
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Scale(x, factor) => {
                self.accumulate(grads, *x, g.scale(*factor))?;
            }
            Op::Ln(x) => {
                let mut dx = g.clone();
                for (d, &v) in dx.as_mut_slice().iter_mut().zip(self.value(*x).as_slice()) {
                    *d = if v > f64::MIN_POSITIVE { *d / v } else { 0.0 };
                }
                self.accumulate(grads, *x, dx)?;
            }
            Op::WeightedSum { weights, parts } => {
                let w = self.value(*weights);
                if self.requires(*weights) {
                    let dw: Vec<f64> = parts
                        .iter()
                        .map(|&p| {
                            self.value(p)
                                .as_slice()
                                .iter()
                                .zip(g.as_slice())
                                .map(|(a, b)| a * b)
                                .sum()
                        })
                        .collect();
                    self.accumulate(grads, *weights, DenseMatrix::new(1, parts.len(), dw)?)?;
                }
                for (j, &p) in parts.iter().enumerate() {
                    if self.requires(p) {
                        self.accumulate(grads, p, g.scale(w.as_slice()[j]))?;
                    }
                }
            }
            Op::SumSquares(x) => {
                let factor = 2.0 * g.as_slice()[0];
                self.accumulate(grads, *x, self.value(*x).scale(factor))?;
            }
            Op::Sum(x) => {
                let (r, c) = self.value(*x).shape();
                self.accumulate(grads, *x, DenseMatrix::filled(r, c, g.as_slice()[0]))?;
            }
            Op::MaskedSoftmaxCe {
                logits,
                labels,
                rows,
            } => {
                let (l, y) = (self.value(*logits), self.value(*labels));
                let scale = g.as_slice()[0] / rows.len() as f64;
                let mut dl = DenseMatrix::zeros(l.rows(), l.cols());
                for &i in rows.iter() {
                    let mut p = l.row(i).to_vec();
                    softmax_in_place(&mut p);
                    let label_mass: f64 = y.row(i).iter().sum();
                    for ((d, &pv), &t) in dl.row_mut(i).iter_mut().zip(&p).zip(y.row(i)) {
                        *d = scale * (pv * label_mass - t);
                    }
                }
                self.accumulate(grads, *logits, dl)?;
            }
            Op::MaskedSigmoidCe {
                logits,
                labels,
                rows,
            } => {
                let (l, y) = (self.value(*logits), self.value(*labels));
                let scale = g.as_slice()[0] / (rows.len() * l.cols()) as f64;
                let mut dl = DenseMatrix::zeros(l.rows(), l.cols());
                for &i in rows.iter() {
                    for ((d, &x), &t) in dl.row_mut(i).iter_mut().zip(l.row(i)).zip(y.row(i)) {
                        *d = scale * (sigmoid(x) - t);
                    }
                }
                self.accumulate(grads, *logits, dl)?;
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `v`; zeros when `v` was not reached from the loss.
    pub fn get(&self, v: Var) -> DenseMatrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                DenseMatrix::zeros(r, c)
            }
        }
    }

    pub fn try_get(&self, v: Var) -> Option<&DenseMatrix> {
        self.grads[v.0].as_ref()
    }

    /// Moves the adjoint out, or zeros when absent.
    pub fn take(&mut self, v: Var) -> DenseMatrix {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                DenseMatrix::zeros(r, c)
            }
        }
    }
}
