//! Sparse adjacency matrices, their normalizations, and the walk-power
//! operator.
//!
//! Powers of a normalized adjacency are never materialized: a
//! [`WalkOperator`] of power `k` applies its base matrix `k` times in a row.
//! [`dense_power_oracle`] is the brute-force counterpart used by tests.

use std::sync::Arc;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Square CSR matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a CSR matrix from `(row, col, value)` triplets. Duplicate
    /// positions are rejected.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        for (i, &(r, c, _)) in triplets.iter().enumerate() {
            if r >= n || c >= n {
                return Err(Error::data(
                    "triplets",
                    Some(i + 1),
                    format!("entry ({r}, {c}) outside a {n}x{n} matrix"),
                ));
            }
        }
        triplets.sort_by_key(|t| (t.0, t.1));
        if let Some(w) = triplets.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::data(
                "triplets",
                None,
                format!("duplicate entry ({}, {})", w[0].0, w[0].1),
            ));
        }
        let mut row_ptr = vec![0usize; n + 1];
        for &(r, _, _) in &triplets {
            row_ptr[r + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = triplets.iter().map(|t| t.1).collect();
        let values = triplets.iter().map(|t| t.2).collect();
        Ok(Self {
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(col, value)` pairs of row `i`, in ascending column order.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&j) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    /// Structural and numeric symmetry.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| self.get(j, i) == v && self.has_entry(j, i)))
    }

    fn has_entry(&self, i: usize, j: usize) -> bool {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span].binary_search(&j).is_ok()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out.set(i, j, v);
            }
        }
        out
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            n: self.n,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values,
        }
    }

    fn nonzero_row_sums(&self) -> Result<Vec<f64>> {
        let sums = self.row_sums();
        if let Some(i) = sums.iter().position(|&d| d <= 0.0) {
            return Err(Error::data(
                "adjacency",
                Some(i + 1),
                format!("node {i} has degree {}; add self-loops before normalizing", sums[i]),
            ));
        }
        Ok(sums)
    }

    /// `D^{-1/2} A D^{-1/2}` with `D` the diagonal of row sums.
    pub fn sym_normalize(&self) -> Result<Self> {
        let d = self.nonzero_row_sums()?;
        let mut values = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                values.push(v / (d[i] * d[j]).sqrt());
            }
        }
        Ok(self.with_values(values))
    }

    /// `D^{-1} A`, the row-stochastic transition matrix.
    pub fn rw_normalize(&self) -> Result<Self> {
        let sums = self.nonzero_row_sums()?;
        let mut values = Vec::with_capacity(self.nnz());
        for (i, d) in sums.iter().enumerate() {
            for (_, v) in self.row(i) {
                values.push(v / d);
            }
        }
        Ok(self.with_values(values))
    }

    /// Sparse-dense product `S · H`.
    pub fn spmm(&self, h: &DenseMatrix) -> Result<DenseMatrix> {
        if h.rows() != self.n {
            return Err(Error::config(format!(
                "spmm: {n}x{n} sparse times {}x{} dense",
                h.rows(),
                h.cols(),
                n = self.n
            )));
        }
        let cols = h.cols();
        let mut out = DenseMatrix::zeros(self.n, cols);
        for i in 0..self.n {
            let out_row = out.row_mut(i);
            for (j, v) in self.row(i) {
                for (o, &x) in out_row.iter_mut().zip(h.row(j)) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// `Sᵀ · G`, scattering each row of `G` through the stored entries.
    pub fn spmm_transpose(&self, g: &DenseMatrix) -> Result<DenseMatrix> {
        if g.rows() != self.n {
            return Err(Error::config(format!(
                "spmm_transpose: {n}x{n} sparse against {}x{} dense",
                g.rows(),
                g.cols(),
                n = self.n
            )));
        }
        let mut out = DenseMatrix::zeros(self.n, g.cols());
        for i in 0..self.n {
            let g_row = g.row(i);
            for (j, v) in self.row(i) {
                for (o, &x) in out.row_mut(j).iter_mut().zip(g_row) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }
}

/// Builds a binary adjacency matrix from an edge list.
///
/// Duplicate edges collapse to weight 1. With `symmetrize` every edge is
/// also inserted reversed; with `self_loops` every diagonal entry is set to 1.
pub fn build_graph(
    edges: &[(usize, usize)],
    n: usize,
    symmetrize: bool,
    self_loops: bool,
) -> Result<SparseMatrix> {
    let mut pairs = Vec::with_capacity(edges.len() * if symmetrize { 2 } else { 1 } + n);
    for (i, &(src, dst)) in edges.iter().enumerate() {
        if src >= n || dst >= n {
            return Err(Error::data(
                "edges",
                Some(i + 1),
                format!("edge ({src}, {dst}) references a node outside [0, {n})"),
            ));
        }
        pairs.push((src, dst));
        if symmetrize {
            pairs.push((dst, src));
        }
    }
    if self_loops {
        pairs.extend((0..n).map(|i| (i, i)));
    }
    pairs.sort_unstable();
    pairs.dedup();
    SparseMatrix::from_triplets(n, pairs.into_iter().map(|(i, j)| (i, j, 1.0)).collect())
}

/// `base^power` as an operator on dense matrices. `power == 0` is the
/// identity.
#[derive(Debug, Clone)]
pub struct WalkOperator {
    base: Arc<SparseMatrix>,
    power: usize,
}

impl WalkOperator {
    pub fn new(base: Arc<SparseMatrix>, power: usize) -> Self {
        Self { base, power }
    }

    pub fn base(&self) -> &Arc<SparseMatrix> {
        &self.base
    }

    pub fn power(&self) -> usize {
        self.power
    }

    /// `base^power · h` by repeated SpMM.
    pub fn apply(&self, h: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = h.clone();
        for _ in 0..self.power {
            out = self.base.spmm(&out)?;
        }
        Ok(out)
    }

    /// Tape-recorded version of [`apply`](Self::apply). Power 0 returns `h`
    /// itself without recording anything.
    pub fn apply_on(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let mut out = h;
        for _ in 0..self.power {
            out = tape.spmm(&self.base, out)?;
        }
        Ok(out)
    }
}

/// Largest matrix [`dense_power_oracle`] agrees to densify.
pub const DENSE_ORACLE_MAX_N: usize = 200;

/// Dense `s^k` by repeated naive multiplication. Test oracle only.
pub fn dense_power_oracle(s: &SparseMatrix, k: usize) -> Result<DenseMatrix> {
    if s.n() > DENSE_ORACLE_MAX_N {
        return Err(Error::config(format!(
            "dense_power_oracle refuses n = {} > {DENSE_ORACLE_MAX_N}",
            s.n()
        )));
    }
    let dense = s.to_dense();
    let n = s.n();
    let mut acc = DenseMatrix::identity(n);
    for _ in 0..k {
        let mut next = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut sum = 0.0;
                for m in 0..n {
                    sum += acc.get(i, m) * dense.get(m, j);
                }
                next.set(i, j, sum);
            }
        }
        acc = next;
    }
    Ok(acc)
}
