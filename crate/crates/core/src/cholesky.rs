//! Sparse and dense Cholesky factorizations.
//!
//! The sparse path follows the classic up-looking scheme: a fill-reducing
//! minimum-degree ordering, an elimination tree, row-subtree column counts and
//! a numeric pass that computes one row of `L` at a time. The symbolic part is
//! kept separately so repeated factorizations of matrices sharing one pattern
//! (every hyperparameter evaluation of a fit) skip the ordering work.

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ElkError, Result};
use crate::sparse::SparseMatrix;

const NONE: usize = usize::MAX;

/// Fill-reducing ordering of a symmetric pattern by minimum degree.
///
/// Returns `perm` with `perm[new] = old`. Ties are broken by the lowest
/// original index, which makes the ordering a pure function of the pattern.
pub fn minimum_degree_ordering(q: &SparseMatrix) -> Vec<usize> {
    let n = q.ncols();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (r, c, _) in q.triplets() {
        if r != c {
            adj[r].push(c);
            adj[c].push(r);
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    let mut eliminated = vec![false; n];
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|i| (adj[i].len(), i)).collect();
    let mut perm = Vec::with_capacity(n);
    let mut merged: Vec<usize> = Vec::new();

    while let Some(&(deg, v)) = queue.iter().next() {
        queue.remove(&(deg, v));
        eliminated[v] = true;
        perm.push(v);
        let nbrs = std::mem::take(&mut adj[v]);
        for &u in &nbrs {
            let old = adj[u].len();
            merged.clear();
            let (a, b) = (&adj[u], &nbrs);
            let (mut i, mut j) = (0, 0);
            while i < a.len() || j < b.len() {
                let next = if j == b.len() || (i < a.len() && a[i] < b[j]) {
                    i += 1;
                    a[i - 1]
                } else if i == a.len() || b[j] < a[i] {
                    j += 1;
                    b[j - 1]
                } else {
                    i += 1;
                    j += 1;
                    a[i - 1]
                };
                if next != u && next != v && !eliminated[next] {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
            if adj[u].len() != old {
                queue.remove(&(old, u));
                queue.insert((adj[u].len(), u));
            }
        }
    }
    perm
}

/// Ordering, elimination tree and column structure of a factorization.
#[derive(Debug, Clone)]
pub struct SymbolicCholesky {
    n: usize,
    perm: Vec<usize>,
    /// Upper triangle of `P Q P^T` (CSC), pattern only.
    c_col_ptr: Vec<usize>,
    c_row_idx: Vec<usize>,
    /// For each stored entry of the input, its slot in the permuted upper
    /// triangle (or `NONE` for strictly-lower entries after permutation).
    input_to_c: Vec<usize>,
    input_col_ptr: Vec<usize>,
    input_row_idx: Vec<usize>,
    parent: Vec<usize>,
    l_col_ptr: Vec<usize>,
}

impl SymbolicCholesky {
    pub fn analyze(q: &SparseMatrix) -> Result<Self> {
        let perm = minimum_degree_ordering(q);
        Self::with_ordering(q, perm)
    }

    pub fn with_ordering(q: &SparseMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = q.ncols();
        if q.nrows() != n || perm.len() != n {
            return Err(ElkError::DimensionMismatch("cholesky needs a square matrix and matching ordering".into()));
        }
        let mut inv = vec![NONE; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        if inv.contains(&NONE) {
            return Err(ElkError::InvalidArgument("ordering is not a permutation".into()));
        }

        // Permuted upper triangle with a back-map from input slots.
        let mut counts = vec![0usize; n + 1];
        let mut targets = Vec::with_capacity(q.nnz());
        for (r, c, _) in q.triplets() {
            let (i, j) = (inv[r], inv[c]);
            if i <= j {
                counts[j + 1] += 1;
                targets.push((i, j));
            } else {
                targets.push((NONE, NONE));
            }
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let mut buckets: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (slot, &(i, j)) in targets.iter().enumerate() {
            if i != NONE {
                buckets[j].push((i, slot));
            }
        }
        let mut c_row_idx = Vec::with_capacity(counts[n]);
        let mut input_to_c = vec![NONE; q.nnz()];
        for bucket in buckets.iter_mut() {
            bucket.sort_unstable();
            for &(i, slot) in bucket.iter() {
                input_to_c[slot] = c_row_idx.len();
                c_row_idx.push(i);
            }
        }
        let c_col_ptr = counts;

        // Elimination tree of the permuted matrix.
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for &row in &c_row_idx[c_col_ptr[k]..c_col_ptr[k + 1]] {
                let mut i = row;
                while i != NONE && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NONE {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }

        // Column counts by walking each row subtree.
        let mut colcount = vec![1usize; n];
        let mut mark = vec![NONE; n];
        for k in 0..n {
            mark[k] = k;
            for &row in &c_row_idx[c_col_ptr[k]..c_col_ptr[k + 1]] {
                let mut i = row;
                while i < k && mark[i] != k {
                    colcount[i] += 1;
                    mark[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut l_col_ptr = vec![0usize; n + 1];
        for j in 0..n {
            l_col_ptr[j + 1] = l_col_ptr[j] + colcount[j];
        }

        Ok(SymbolicCholesky {
            n,
            perm,
            c_col_ptr,
            c_row_idx,
            input_to_c,
            input_col_ptr: q.col_ptr().to_vec(),
            input_row_idx: q.row_idx().to_vec(),
            parent,
            l_col_ptr,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_l(&self) -> usize {
        self.l_col_ptr[self.n]
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    fn matches(&self, q: &SparseMatrix) -> bool {
        q.ncols() == self.n && q.col_ptr() == self.input_col_ptr.as_slice() && q.row_idx() == self.input_row_idx.as_slice()
    }

    /// Numeric factorization of a matrix with exactly the analyzed pattern.
    pub fn factor(self: &Arc<Self>, q: &SparseMatrix) -> Result<CholFactor> {
        if !self.matches(q) {
            return Err(ElkError::InvalidArgument("matrix pattern differs from the analyzed pattern".into()));
        }
        let n = self.n;
        let mut c_values = vec![0.0; self.c_row_idx.len()];
        for (slot, &t) in self.input_to_c.iter().enumerate() {
            if t != NONE {
                c_values[t] = q.values()[slot];
            }
        }

        let nnz = self.nnz_l();
        let mut l_row_idx = vec![0usize; nnz];
        let mut l_values = vec![0.0; nnz];
        let mut next = self.l_col_ptr[..n].to_vec();
        let mut x = vec![0.0; n];
        let mut mark = vec![NONE; n];
        let mut stack = vec![0usize; n];
        let mut pattern = vec![0usize; n];
        let mut logdet = 0.0;

        for k in 0..n {
            // Nonzero pattern of row k of L, in topological order.
            let mut top = n;
            mark[k] = k;
            for p in self.c_col_ptr[k]..self.c_col_ptr[k + 1] {
                let mut i = self.c_row_idx[p];
                x[i] = c_values[p];
                let mut len = 0;
                while mark[i] != k {
                    stack[len] = i;
                    len += 1;
                    mark[i] = k;
                    i = self.parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    pattern[top] = stack[len];
                }
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &j in &pattern[top..n] {
                let start = self.l_col_ptr[j];
                let lkj = x[j] / l_values[start];
                x[j] = 0.0;
                for p in start + 1..next[j] {
                    x[l_row_idx[p]] -= l_values[p] * lkj;
                }
                d -= lkj * lkj;
                let p = next[j];
                l_row_idx[p] = k;
                l_values[p] = lkj;
                next[j] += 1;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(ElkError::NotPositiveDefinite { pivot: self.perm[k] });
            }
            let lkk = d.sqrt();
            let p = next[k];
            l_row_idx[p] = k;
            l_values[p] = lkk;
            next[k] += 1;
            logdet += 2.0 * lkk.ln();
        }

        Ok(CholFactor { symbolic: Arc::clone(self), l_row_idx, l_values, logdet })
    }
}

/// Numeric factor `P Q P^T = L L^T`.
#[derive(Debug, Clone)]
pub struct CholFactor {
    symbolic: Arc<SymbolicCholesky>,
    l_row_idx: Vec<usize>,
    l_values: Vec<f64>,
    logdet: f64,
}

/// Factorizes a symmetric positive definite matrix (both triangles stored).
pub fn cholesky(q: &SparseMatrix) -> Result<CholFactor> {
    Arc::new(SymbolicCholesky::analyze(q)?).factor(q)
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.symbolic.n
    }

    /// `log det Q`.
    pub fn log_det(&self) -> f64 {
        self.logdet
    }

    pub fn permutation(&self) -> &[usize] {
        &self.symbolic.perm
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    /// The lower factor `L` in the permuted ordering.
    pub fn l_matrix(&self) -> SparseMatrix {
        let n = self.dim();
        SparseMatrix::from_csc(n, n, self.symbolic.l_col_ptr.clone(), self.l_row_idx.clone(), self.l_values.clone())
            .expect("factor is a valid CSC matrix")
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(ElkError::DimensionMismatch(format!(
                "vector of length {len} for a factor of dimension {}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// In place `y <- L^{-1} y` (permuted coordinates).
    fn forward(&self, y: &mut [f64]) {
        let lp = &self.symbolic.l_col_ptr;
        for j in 0..self.dim() {
            let yj = y[j] / self.l_values[lp[j]];
            y[j] = yj;
            if yj != 0.0 {
                for p in lp[j] + 1..lp[j + 1] {
                    y[self.l_row_idx[p]] -= self.l_values[p] * yj;
                }
            }
        }
    }

    /// In place `y <- L^{-T} y` (permuted coordinates).
    fn backward(&self, y: &mut [f64]) {
        let lp = &self.symbolic.l_col_ptr;
        for j in (0..self.dim()).rev() {
            let mut s = y[j];
            for p in lp[j] + 1..lp[j + 1] {
                s -= self.l_values[p] * y[self.l_row_idx[p]];
            }
            y[j] = s / self.l_values[lp[j]];
        }
    }

    /// `Q^{-1} b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check_len(b.len())?;
        let perm = &self.symbolic.perm;
        let mut y: Vec<f64> = perm.iter().map(|&old| b[old]).collect();
        self.forward(&mut y);
        self.backward(&mut y);
        let mut x = vec![0.0; b.len()];
        for (new, &old) in perm.iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }

    /// Column-by-column `Q^{-1} B`.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_len(b.nrows())?;
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for c in 0..b.ncols() {
            let col: Vec<f64> = b.column(c).iter().copied().collect();
            let x = self.solve(&col)?;
            out.column_mut(c).copy_from_slice(&x);
        }
        Ok(out)
    }

    /// `a^T Q^{-1} a`, computed as `|L^{-1} P a|^2`.
    pub fn inverse_quadratic(&self, a: &[f64]) -> Result<f64> {
        self.check_len(a.len())?;
        let mut y: Vec<f64> = self.symbolic.perm.iter().map(|&old| a[old]).collect();
        self.forward(&mut y);
        Ok(y.iter().map(|v| v * v).sum())
    }

    /// `mean + P^T L^{-T} z` for a supplied standard-normal vector `z`.
    pub fn sample_with_noise(&self, mean: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.check_len(mean.len())?;
        self.check_len(z.len())?;
        let mut w = z.to_vec();
        self.backward(&mut w);
        let mut x = mean.to_vec();
        for (new, &old) in self.symbolic.perm.iter().enumerate() {
            x[old] += w[new];
        }
        Ok(x)
    }

    /// One draw from `N(mean, Q^{-1})`.
    pub fn sample<R: Rng + ?Sized>(&self, mean: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.sample_with_noise(mean, &z)
    }

    /// Diagonal of `Q^{-1}` by unit solves; intended for small systems and tests.
    pub fn inverse_diagonal(&self) -> Result<Vec<f64>> {
        let n = self.dim();
        let mut e = vec![0.0; n];
        (0..n)
            .map(|i| {
                e[i] = 1.0;
                let v = self.inverse_quadratic(&e);
                e[i] = 0.0;
                v
            })
            .collect()
    }
}

/// Dense GMRF draw, kept as a free function for symmetry with the other ops.
pub fn sample_gmrf<R: Rng + ?Sized>(factor: &CholFactor, mean: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    factor.sample(mean, rng)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Dense lower Cholesky factor stored packed by rows.
#[derive(Debug, Clone)]
pub struct DenseCholesky {
    n: usize,
    packed: Vec<f64>,
}

#[inline]
fn row_start(i: usize) -> usize {
    i * (i + 1) / 2
}

impl DenseCholesky {
    /// Factorizes a symmetric matrix given by an entry callback `(i, j)` with `j <= i`.
    pub fn from_fn(n: usize, mut entry: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut packed = vec![0.0; n * (n + 1) / 2];
        for i in 0..n {
            let s = row_start(i);
            for j in 0..=i {
                packed[s + j] = entry(i, j);
            }
        }
        Self::factor_packed(n, packed)
    }

    pub fn new(c: &DMatrix<f64>) -> Result<Self> {
        if c.nrows() != c.ncols() {
            return Err(ElkError::DimensionMismatch("dense cholesky needs a square matrix".into()));
        }
        Self::from_fn(c.nrows(), |i, j| c[(i, j)])
    }

    fn factor_packed(n: usize, mut packed: Vec<f64>) -> Result<Self> {
        const BLOCK: usize = 16;
        let mut i0 = 0;
        while i0 < n {
            let i1 = (i0 + BLOCK).min(n);
            // Columns left of the block: each row j is reused by all rows in the block.
            for j in 0..i0 {
                let (head, tail) = packed.split_at_mut(row_start(i0));
                let rj = &head[row_start(j)..row_start(j) + j + 1];
                let djj = rj[j];
                for i in i0..i1 {
                    let off = row_start(i) - row_start(i0);
                    let ri = &mut tail[off..off + i + 1];
                    let s = ri[j] - dot(&ri[..j], &rj[..j]);
                    ri[j] = s / djj;
                }
            }
            // Triangle inside the block.
            for i in i0..i1 {
                for j in i0..=i {
                    let (head, tail) = packed.split_at_mut(row_start(i));
                    let ri = &mut tail[..i + 1];
                    if j == i {
                        let d = ri[i] - dot(&ri[..i], &ri[..i]);
                        if !(d > 0.0) || !d.is_finite() {
                            return Err(ElkError::NotPositiveDefinite { pivot: i });
                        }
                        ri[i] = d.sqrt();
                    } else {
                        let rj = &head[row_start(j)..row_start(j) + j + 1];
                        let s = ri[j] - dot(&ri[..j], &rj[..j]);
                        ri[j] = s / rj[j];
                    }
                }
            }
            i0 = i1;
        }
        Ok(DenseCholesky { n, packed })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.packed[row_start(i)..row_start(i) + i + 1]
    }

    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| 2.0 * self.row(i)[i].ln()).sum()
    }

    pub fn to_lower(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| if j <= i { self.row(i)[j] } else { 0.0 })
    }

    /// `L z`.
    pub fn lower_mul(&self, z: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(self.row(i), &z[..=i])).collect()
    }

    /// In place `L^{-1} b`.
    pub fn forward_solve(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let r = self.row(i);
            b[i] = (b[i] - dot(&r[..i], &b[..i])) / r[i];
        }
    }

    /// In place `L^{-T} b`.
    pub fn backward_solve(&self, b: &mut [f64]) {
        for i in (0..self.n).rev() {
            let r = self.row(i);
            b[i] /= r[i];
            let bi = b[i];
            for (k, &lik) in r[..i].iter().enumerate() {
                b[k] -= lik * bi;
            }
        }
    }

    /// `C^{-1} b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward_solve(&mut x);
        self.backward_solve(&mut x);
        x
    }
}

/// Dense lower Cholesky factor of a symmetric positive definite matrix.
pub fn dense_cholesky(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(DenseCholesky::new(c)?.to_lower())
}
