//! Compressed-sparse-column matrices.
//!
//! Column indices are sorted within each column and never duplicated. The
//! type is deliberately small: it carries exactly the operations the
//! precision assembly, basis evaluation and factorization code need.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ElkError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMatrix {
            nrows,
            ncols,
            col_ptr: vec![0; ncols + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        SparseMatrix {
            nrows: n,
            ncols: n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut counts = vec![0usize; ncols + 1];
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(ElkError::DimensionMismatch(format!(
                    "triplet ({r}, {c}) outside {nrows}x{ncols}"
                )));
            }
            counts[c + 1] += 1;
        }
        for c in 0..ncols {
            counts[c + 1] += counts[c];
        }
        let mut next = counts.clone();
        let mut rows = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let p = next[c];
            rows[p] = r;
            vals[p] = v;
            next[c] += 1;
        }

        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        col_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for c in 0..ncols {
            scratch.clear();
            scratch.extend((counts[c]..counts[c + 1]).map(|p| (rows[p], vals[p])));
            scratch.sort_by_key(|&(r, _)| r);
            let mut i = 0;
            while i < scratch.len() {
                let r = scratch[i].0;
                let mut v = 0.0;
                while i < scratch.len() && scratch[i].0 == r {
                    v += scratch[i].1;
                    i += 1;
                }
                row_idx.push(r);
                values.push(v);
            }
            col_ptr.push(row_idx.len());
        }
        Ok(SparseMatrix { nrows, ncols, col_ptr, row_idx, values })
    }

    /// Builds directly from CSC arrays, validating the sorted/unique invariant.
    pub fn from_csc(
        nrows: usize,
        ncols: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if col_ptr.len() != ncols + 1 || row_idx.len() != values.len() || col_ptr[ncols] != row_idx.len() {
            return Err(ElkError::DimensionMismatch("inconsistent CSC arrays".into()));
        }
        for c in 0..ncols {
            if col_ptr[c] > col_ptr[c + 1] {
                return Err(ElkError::DimensionMismatch("column pointers must be non-decreasing".into()));
            }
            let col = &row_idx[col_ptr[c]..col_ptr[c + 1]];
            for w in col.windows(2) {
                if w[0] >= w[1] {
                    return Err(ElkError::InvalidArgument(format!(
                        "column {c}: row indices must be strictly increasing"
                    )));
                }
            }
            if col.last().is_some_and(|&r| r >= nrows) {
                return Err(ElkError::DimensionMismatch(format!("column {c}: row index out of range")));
            }
        }
        Ok(SparseMatrix { nrows, ncols, col_ptr, row_idx, values })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Row indices and values of column `c`.
    pub fn col(&self, c: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.col_ptr[c], self.col_ptr[c + 1]);
        (&self.row_idx[a..b], &self.values[a..b])
    }

    /// Position of `(r, c)` in the value array, if structurally present.
    pub fn find(&self, r: usize, c: usize) -> Option<usize> {
        let (a, b) = (self.col_ptr[c], self.col_ptr[c + 1]);
        self.row_idx[a..b].binary_search(&r).ok().map(|k| a + k)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.find(r, c).map_or(0.0, |p| self.values[p])
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1]).map(move |p| (self.row_idx[p], c, self.values[p]))
        })
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.nrows + 1];
        for &r in &self.row_idx {
            counts[r + 1] += 1;
        }
        for r in 0..self.nrows {
            counts[r + 1] += counts[r];
        }
        let mut next = counts.clone();
        let mut row_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for c in 0..self.ncols {
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[p];
                let q = next[r];
                row_idx[q] = c;
                values[q] = self.values[p];
                next[r] += 1;
            }
        }
        SparseMatrix { nrows: self.ncols, ncols: self.nrows, col_ptr: counts, row_idx, values }
    }

    pub fn scaled(&self, a: f64) -> SparseMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= a);
        out
    }

    /// `a * self + b * other` over the union of the two patterns.
    pub fn add(&self, other: &SparseMatrix, a: f64, b: f64) -> Result<SparseMatrix> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(ElkError::DimensionMismatch(format!(
                "add {}x{} and {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut col_ptr = Vec::with_capacity(self.ncols + 1);
        let mut row_idx = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        col_ptr.push(0);
        for c in 0..self.ncols {
            let (ra, va) = self.col(c);
            let (rb, vb) = other.col(c);
            let (mut i, mut j) = (0, 0);
            while i < ra.len() || j < rb.len() {
                if j == rb.len() || (i < ra.len() && ra[i] < rb[j]) {
                    row_idx.push(ra[i]);
                    values.push(a * va[i]);
                    i += 1;
                } else if i == ra.len() || rb[j] < ra[i] {
                    row_idx.push(rb[j]);
                    values.push(b * vb[j]);
                    j += 1;
                } else {
                    row_idx.push(ra[i]);
                    values.push(a * va[i] + b * vb[j]);
                    i += 1;
                    j += 1;
                }
            }
            col_ptr.push(row_idx.len());
        }
        Ok(SparseMatrix { nrows: self.nrows, ncols: self.ncols, col_ptr, row_idx, values })
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.ncols != other.nrows {
            return Err(ElkError::DimensionMismatch(format!(
                "matmul {}x{} by {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut col_ptr = Vec::with_capacity(other.ncols + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        let mut acc = vec![0.0; self.nrows];
        let mut mark = vec![usize::MAX; self.nrows];
        let mut touched: Vec<usize> = Vec::new();
        col_ptr.push(0);
        for c in 0..other.ncols {
            touched.clear();
            let (rb, vb) = other.col(c);
            for (&k, &bk) in rb.iter().zip(vb) {
                let (ra, va) = self.col(k);
                for (&r, &ar) in ra.iter().zip(va) {
                    if mark[r] != c {
                        mark[r] = c;
                        acc[r] = 0.0;
                        touched.push(r);
                    }
                    acc[r] += ar * bk;
                }
            }
            touched.sort_unstable();
            for &r in &touched {
                row_idx.push(r);
                values.push(acc[r]);
            }
            col_ptr.push(row_idx.len());
        }
        Ok(SparseMatrix { nrows: self.nrows, ncols: other.ncols, col_ptr, row_idx, values })
    }

    /// `self^T * self`.
    pub fn gram(&self) -> SparseMatrix {
        self.transpose().matmul(self).expect("gram dimensions always agree")
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(ElkError::DimensionMismatch(format!(
                "vector of length {} for {} columns",
                x.len(),
                self.ncols
            )));
        }
        let mut y = vec![0.0; self.nrows];
        for (c, &xc) in x.iter().enumerate() {
            if xc == 0.0 {
                continue;
            }
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[p]] += self.values[p] * xc;
            }
        }
        Ok(y)
    }

    /// `self^T x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.nrows {
            return Err(ElkError::DimensionMismatch(format!(
                "vector of length {} for {} rows",
                x.len(),
                self.nrows
            )));
        }
        Ok((0..self.ncols)
            .map(|c| {
                (self.col_ptr[c]..self.col_ptr[c + 1])
                    .map(|p| self.values[p] * x[self.row_idx[p]])
                    .sum()
            })
            .collect())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }

    pub fn from_dense(m: &DMatrix<f64>) -> SparseMatrix {
        let mut trip = Vec::new();
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                if m[(r, c)] != 0.0 {
                    trip.push((r, c, m[(r, c)]));
                }
            }
        }
        SparseMatrix::from_triplets(m.nrows(), m.ncols(), &trip).expect("indices in range")
    }

    /// Block-diagonal matrix with the given blocks along the diagonal.
    pub fn block_diag(blocks: &[&SparseMatrix]) -> SparseMatrix {
        let nrows = blocks.iter().map(|b| b.nrows).sum();
        let ncols = blocks.iter().map(|b| b.ncols).sum();
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        let mut roff = 0;
        for b in blocks {
            for c in 0..b.ncols {
                let (r, v) = b.col(c);
                row_idx.extend(r.iter().map(|&i| i + roff));
                values.extend_from_slice(v);
                col_ptr.push(row_idx.len());
            }
            roff += b.nrows;
        }
        SparseMatrix { nrows, ncols, col_ptr, row_idx, values }
    }

    /// Column-wise concatenation `[a b ...]`.
    pub fn hstack(blocks: &[&SparseMatrix]) -> Result<SparseMatrix> {
        let nrows = blocks.first().map_or(0, |b| b.nrows);
        if blocks.iter().any(|b| b.nrows != nrows) {
            return Err(ElkError::DimensionMismatch("hstack with differing row counts".into()));
        }
        let ncols = blocks.iter().map(|b| b.ncols).sum();
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for b in blocks {
            for c in 0..b.ncols {
                let (r, v) = b.col(c);
                row_idx.extend_from_slice(r);
                values.extend_from_slice(v);
                col_ptr.push(row_idx.len());
            }
        }
        Ok(SparseMatrix { nrows, ncols, col_ptr, row_idx, values })
    }

    /// Kronecker product `a ⊗ b`.
    pub fn kron(a: &SparseMatrix, b: &SparseMatrix) -> SparseMatrix {
        let mut trip = Vec::with_capacity(a.nnz() * b.nnz());
        for (ra, ca, va) in a.triplets() {
            for (rb, cb, vb) in b.triplets() {
                trip.push((ra * b.nrows + rb, ca * b.ncols + cb, va * vb));
            }
        }
        SparseMatrix::from_triplets(a.nrows * b.nrows, a.ncols * b.ncols, &trip).expect("in range")
    }

    /// Rows `rows` of the matrix, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> SparseMatrix {
        let mut new_of = vec![Vec::new(); self.nrows];
        for (new, &old) in rows.iter().enumerate() {
            new_of[old].push(new);
        }
        let mut trip = Vec::new();
        for (r, c, v) in self.triplets() {
            for &n in &new_of[r] {
                trip.push((n, c, v));
            }
        }
        SparseMatrix::from_triplets(rows.len(), self.ncols, &trip).expect("in range")
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.nrows == self.ncols && self.triplets().all(|(r, c, v)| (self.get(c, r) - v).abs() <= tol)
    }

    pub fn max_abs_diff(&self, other: &SparseMatrix) -> f64 {
        match self.add(other, 1.0, -1.0) {
            Ok(d) => d.values.iter().fold(0.0, |m, v| m.max(v.abs())),
            Err(_) => f64::INFINITY,
        }
    }
}
