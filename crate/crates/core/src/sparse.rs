//! Sparse symmetric matrices and a simplicial Cholesky factorization.
//!
//! Matrices store their lower triangle in compressed-column form over a
//! shared [`SymPattern`], so repeated factorizations with changing values
//! (Newton iterations, hyperparameter sweeps) reuse one symbolic analysis.
//! The numeric kernel is the up-looking algorithm driven by the elimination
//! tree; the factor also supports triangular solves for sampling and
//! Takahashi selected inversion for marginal variances.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Lower-triangular (row >= col) compressed-column sparsity pattern of a
/// symmetric matrix. The diagonal is always present.
#[derive(Debug, Clone, PartialEq)]
pub struct SymPattern {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
}

impl SymPattern {
    /// Builds a pattern from arbitrary (row, col) pairs; either triangle is
    /// accepted and duplicates are merged.
    pub fn from_entries(n: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut cols: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (i, j) in entries {
            assert!(i < n && j < n, "pattern entry ({i}, {j}) out of range for n = {n}");
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            cols[c].push(r as u32);
        }
        Self::from_columns(cols)
    }

    /// Builds a pattern from per-column row lists (rows >= column, any order,
    /// duplicates allowed). The diagonal is added.
    pub fn from_columns(cols: Vec<Vec<u32>>) -> Self {
        let n = cols.len();
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for (j, mut col) in cols.into_iter().enumerate() {
            debug_assert!(col.iter().all(|&r| r as usize >= j && (r as usize) < n));
            col.push(j as u32);
            col.sort_unstable();
            col.dedup();
            row_idx.extend_from_slice(&col);
            col_ptr.push(row_idx.len());
        }
        Self { n, col_ptr, row_idx }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[u32] {
        &self.row_idx
    }

    /// Rows stored in column `j` (all >= j, ascending).
    pub fn column(&self, j: usize) -> &[u32] {
        &self.row_idx[self.col_ptr[j]..self.col_ptr[j + 1]]
    }

    /// Storage position of entry (i, j) in either triangle.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let start = self.col_ptr[c];
        self.column(c)
            .binary_search(&(r as u32))
            .ok()
            .map(|off| start + off)
    }

    /// Full symmetric structure (both triangles plus diagonal) as CSC arrays.
    /// AMD ignores the diagonal but its input checks expect nnz >= n.
    fn full_adjacency(&self) -> (Vec<usize>, Vec<usize>) {
        let mut deg = vec![1usize; self.n];
        for j in 0..self.n {
            for &r in self.column(j) {
                let r = r as usize;
                if r != j {
                    deg[r] += 1;
                    deg[j] += 1;
                }
            }
        }
        let mut ptr = vec![0usize; self.n + 1];
        for j in 0..self.n {
            ptr[j + 1] = ptr[j] + deg[j];
        }
        let mut next = ptr.clone();
        let mut idx = vec![0usize; ptr[self.n]];
        for j in 0..self.n {
            for &r in self.column(j) {
                let r = r as usize;
                if r == j {
                    idx[next[j]] = j;
                    next[j] += 1;
                } else {
                    idx[next[j]] = r;
                    next[j] += 1;
                    idx[next[r]] = j;
                    next[r] += 1;
                }
            }
        }
        for j in 0..self.n {
            idx[ptr[j]..ptr[j + 1]].sort_unstable();
        }
        (ptr, idx)
    }
}

/// Symmetric matrix with values laid out over a shared pattern.
#[derive(Debug, Clone)]
pub struct SymMatrix {
    pattern: Arc<SymPattern>,
    values: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(pattern: Arc<SymPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    pub fn pattern(&self) -> &Arc<SymPattern> {
        &self.pattern
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Adds `v` to entry (i, j) (and implicitly (j, i)).
    ///
    /// Panics if the entry is not part of the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let pos = self
            .pattern
            .find(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) is not in the sparsity pattern"));
        self.values[pos] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.find(i, j).map_or(0.0, |p| self.values[p])
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n())
            .map(|j| self.values[self.pattern.col_ptr[j]])
            .collect()
    }

    /// y = A x
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(x.len(), n);
        let mut y = vec![0.0; n];
        for j in 0..n {
            let start = self.pattern.col_ptr[j];
            for (off, &r) in self.pattern.column(j).iter().enumerate() {
                let r = r as usize;
                let v = self.values[start + off];
                y[r] += v * x[j];
                if r != j {
                    y[j] += v * x[r];
                }
            }
        }
        y
    }

    /// xᵀ A x
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let n = self.n();
        let mut acc = 0.0;
        for j in 0..n {
            let start = self.pattern.col_ptr[j];
            for (off, &r) in self.pattern.column(j).iter().enumerate() {
                let r = r as usize;
                let v = self.values[start + off];
                if r == j {
                    acc += v * x[j] * x[j];
                } else {
                    acc += 2.0 * v * x[r] * x[j];
                }
            }
        }
        acc
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let start = self.pattern.col_ptr[j];
            for (off, &r) in self.pattern.column(j).iter().enumerate() {
                let r = r as usize;
                m[(r, j)] = self.values[start + off];
                m[(j, r)] = self.values[start + off];
            }
        }
        m
    }
}

/// Fill-reducing ordering and elimination-tree structure for one pattern.
#[derive(Debug)]
pub struct SymbolicCholesky {
    n: usize,
    pattern: Arc<SymPattern>,
    /// perm[k] = original index eliminated k-th.
    perm: Vec<usize>,
    /// Upper triangle of the permuted matrix, CSC, with source positions.
    c_ptr: Vec<usize>,
    c_idx: Vec<usize>,
    c_src: Vec<usize>,
    parent: Vec<usize>,
    l_ptr: Vec<usize>,
    /// First column of the trailing block whose columns of L are full.
    dense_start: usize,
}

const NO_PARENT: usize = usize::MAX;
/// Smallest full trailing block handled with dense kernels.
const DENSE_MIN: usize = 32;

impl SymbolicCholesky {
    /// Analyzes `pattern` with an approximate-minimum-degree ordering.
    pub fn analyze(pattern: &Arc<SymPattern>) -> Result<Self> {
        let n = pattern.n();
        let perm = if n == 0 {
            Vec::new()
        } else {
            let (ap, ai) = pattern.full_adjacency();
            let (p, _, _) = amd::order::<usize>(n, &ap, &ai, &amd::Control::default())
                .map_err(|s| Error::numeric(format!("AMD ordering failed: {s:?}")))?;
            p
        };
        Ok(Self::with_permutation(pattern, perm))
    }

    /// Analyzes `pattern` with an explicit elimination order.
    pub fn with_permutation(pattern: &Arc<SymPattern>, perm: Vec<usize>) -> Self {
        let n = pattern.n();
        assert_eq!(perm.len(), n);
        let mut iperm = vec![0usize; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p] = k;
        }

        // Permuted upper triangle: original (r, c) with r >= c lands at
        // (min(ir, ic), max(ir, ic)).
        let mut counts = vec![0usize; n];
        for j in 0..n {
            for &r in pattern.column(j) {
                let (a, b) = (iperm[r as usize], iperm[j]);
                counts[a.max(b)] += 1;
            }
        }
        let mut c_ptr = vec![0usize; n + 1];
        for k in 0..n {
            c_ptr[k + 1] = c_ptr[k] + counts[k];
        }
        let mut next = c_ptr.clone();
        let mut c_idx = vec![0usize; c_ptr[n]];
        let mut c_src = vec![0usize; c_ptr[n]];
        for j in 0..n {
            let start = pattern.col_ptr[j];
            for (off, &r) in pattern.column(j).iter().enumerate() {
                let (a, b) = (iperm[r as usize], iperm[j]);
                let col = a.max(b);
                c_idx[next[col]] = a.min(b);
                c_src[next[col]] = start + off;
                next[col] += 1;
            }
        }

        // Elimination tree of the permuted matrix.
        let mut parent = vec![NO_PARENT; n];
        let mut ancestor = vec![NO_PARENT; n];
        for k in 0..n {
            for p in c_ptr[k]..c_ptr[k + 1] {
                let mut i = c_idx[p];
                while i != NO_PARENT && i < k {
                    let inext = ancestor[i];
                    ancestor[i] = k;
                    if inext == NO_PARENT {
                        parent[i] = k;
                    }
                    i = inext;
                }
            }
        }

        let mut sym = Self {
            n,
            pattern: Arc::clone(pattern),
            perm,
            c_ptr,
            c_idx,
            c_src,
            parent,
            l_ptr: Vec::new(),
            dense_start: n,
        };

        // Column counts of L from the row patterns.
        let mut col_count = vec![1usize; n];
        let mut stack = vec![0usize; n];
        let mut mark = vec![NO_PARENT; n];
        for k in 0..n {
            let top = sym.ereach(k, &mut stack, &mut mark);
            for &i in &stack[top..] {
                col_count[i] += 1;
            }
        }
        let mut l_ptr = vec![0usize; n + 1];
        for k in 0..n {
            l_ptr[k + 1] = l_ptr[k] + col_count[k];
        }
        sym.l_ptr = l_ptr;
        let mut start = n;
        while start > 0 && col_count[start - 1] == n - start + 1 {
            start -= 1;
        }
        sym.dense_start = if n - start >= DENSE_MIN { start } else { n };
        sym
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Start of the dense trailing block (`n` when there is none).
    pub fn dense_start(&self) -> usize {
        self.dense_start
    }

    /// Number of stored entries in L.
    pub fn factor_nnz(&self) -> usize {
        self.l_ptr[self.n]
    }

    /// Nonzero pattern of row k of L (excluding the diagonal), written into
    /// `stack[top..]` in topological order. Returns `top`.
    fn ereach(&self, k: usize, stack: &mut [usize], mark: &mut [usize]) -> usize {
        let mut top = self.n;
        mark[k] = k;
        for p in self.c_ptr[k]..self.c_ptr[k + 1] {
            let mut i = self.c_idx[p];
            if i > k {
                continue;
            }
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
                stack[top] = stack[len];
            }
        }
        top
    }
}

/// Numeric factor `P A Pᵀ = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    sym: Arc<SymbolicCholesky>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
}

impl CholeskyFactor {
    /// Up-looking sparse factorization. A full trailing block of L (if
    /// large enough) is formed as a dense Schur complement and factored
    /// with dense kernels.
    pub fn factor(sym: &Arc<SymbolicCholesky>, a: &SymMatrix) -> Result<Self> {
        if !Arc::ptr_eq(&sym.pattern, a.pattern()) && *sym.pattern != **a.pattern() {
            return Err(Error::numeric(
                "matrix pattern does not match the symbolic analysis",
            ));
        }
        let n = sym.n;
        let s = sym.dense_start;
        let t = n - s;
        let nnz = sym.factor_nnz();
        let mut l_idx = vec![0usize; nnz];
        let mut l_val = vec![0.0; nnz];
        let mut next: Vec<usize> = sym.l_ptr[..n].to_vec();
        let mut split: Vec<usize> = Vec::new();
        let mut x = vec![0.0; n];
        let mut stack = vec![0usize; n];
        let mut mark = vec![NO_PARENT; n];
        let mut schur = DMatrix::<f64>::zeros(t, t);
        let vals = a.values();
        let not_pd = |d: f64, k: usize| {
            Error::numeric(format!(
                "matrix is not positive definite (pivot {d:e} at original index {})",
                sym.perm[k]
            ))
        };

        for k in 0..n {
            if k == s {
                split = next[..s].to_vec();
            }
            let top = sym.ereach(k, &mut stack, &mut mark);
            x[k] = 0.0;
            for p in sym.c_ptr[k]..sym.c_ptr[k + 1] {
                let i = sym.c_idx[p];
                if i <= k {
                    x[i] = vals[sym.c_src[p]];
                }
            }
            if k >= s {
                // Sparse part of row k: solve against the leading block only.
                for &i in &stack[top..] {
                    if i >= s {
                        continue;
                    }
                    let lki = x[i] / l_val[sym.l_ptr[i]];
                    x[i] = 0.0;
                    for p in sym.l_ptr[i] + 1..split[i] {
                        x[l_idx[p]] -= l_val[p] * lki;
                    }
                    let p = next[i];
                    next[i] += 1;
                    l_idx[p] = k;
                    l_val[p] = lki;
                }
                for j in s..=k {
                    schur[(k - s, j - s)] = x[j];
                    x[j] = 0.0;
                }
                continue;
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &stack[top..] {
                let lki = x[i] / l_val[sym.l_ptr[i]];
                x[i] = 0.0;
                for p in sym.l_ptr[i] + 1..next[i] {
                    x[l_idx[p]] -= l_val[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                next[i] += 1;
                l_idx[p] = k;
                l_val[p] = lki;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(not_pd(d, k));
            }
            let p = next[k];
            next[k] += 1;
            l_idx[p] = k;
            l_val[p] = d.sqrt();
        }

        if t > 0 {
            // schur = A22 - L21 L21ᵀ, lower triangle.
            let mut l21 = DMatrix::<f64>::zeros(t, s);
            for i in 0..s {
                for p in split[i]..next[i] {
                    l21[(l_idx[p] - s, i)] = l_val[p];
                }
            }
            let prod = &l21 * l21.transpose();
            for c in 0..t {
                for r in c..t {
                    schur[(r, c)] -= prod[(r, c)];
                }
            }
            for c in 0..t {
                let mut d = schur[(c, c)];
                for q in 0..c {
                    d -= schur[(c, q)] * schur[(c, q)];
                }
                if !(d > 0.0) || !d.is_finite() {
                    return Err(not_pd(d, s + c));
                }
                let dc = d.sqrt();
                schur[(c, c)] = dc;
                for r in c + 1..t {
                    let mut v = schur[(r, c)];
                    for q in 0..c {
                        v -= schur[(r, q)] * schur[(c, q)];
                    }
                    schur[(r, c)] = v / dc;
                }
            }
            for c in 0..t {
                let base = sym.l_ptr[s + c];
                for r in c..t {
                    l_idx[base + r - c] = s + r;
                    l_val[base + r - c] = schur[(r, c)];
                }
            }
        }
        Ok(Self {
            sym: Arc::clone(sym),
            l_idx,
            l_val,
        })
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.sym
    }

    pub fn n(&self) -> usize {
        self.sym.n
    }

    pub fn log_det(&self) -> f64 {
        let n = self.sym.n;
        2.0 * (0..n)
            .map(|k| self.l_val[self.sym.l_ptr[k]].ln())
            .sum::<f64>()
    }

    fn lsolve(&self, x: &mut [f64]) {
        let lp = &self.sym.l_ptr;
        for j in 0..self.sym.n {
            x[j] /= self.l_val[lp[j]];
            let xj = x[j];
            for p in lp[j] + 1..lp[j + 1] {
                x[self.l_idx[p]] -= self.l_val[p] * xj;
            }
        }
    }

    fn ltsolve(&self, x: &mut [f64]) {
        let lp = &self.sym.l_ptr;
        for j in (0..self.sym.n).rev() {
            let mut s = x[j];
            for p in lp[j] + 1..lp[j + 1] {
                s -= self.l_val[p] * x[self.l_idx[p]];
            }
            x[j] = s / self.l_val[lp[j]];
        }
    }

    /// Solves A x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.sym.n;
        assert_eq!(b.len(), n);
        let mut y: Vec<f64> = self.sym.perm.iter().map(|&p| b[p]).collect();
        self.lsolve(&mut y);
        self.ltsolve(&mut y);
        let mut out = vec![0.0; n];
        for (k, &p) in self.sym.perm.iter().enumerate() {
            out[p] = y[k];
        }
        out
    }

    /// Maps standard-normal `z` to a draw with covariance A⁻¹.
    pub fn sample_from_standard(&self, z: &[f64]) -> Vec<f64> {
        let n = self.sym.n;
        assert_eq!(z.len(), n);
        let mut w = z.to_vec();
        self.ltsolve(&mut w);
        let mut out = vec![0.0; n];
        for (k, &p) in self.sym.perm.iter().enumerate() {
            out[p] = w[k];
        }
        out
    }

    /// Diagonal of A⁻¹ by Takahashi recursions over the pattern of L.
    pub fn inverse_diag(&self) -> Vec<f64> {
        let n = self.sym.n;
        let lp = &self.sym.l_ptr;
        let mut sigma = vec![0.0; self.l_val.len()];
        let lookup = |sigma: &[f64], i: usize, k: usize| -> f64 {
            let (r, c) = if i >= k { (i, k) } else { (k, i) };
            let cols = &self.l_idx[lp[c]..lp[c + 1]];
            match cols.binary_search(&r) {
                Ok(off) => sigma[lp[c] + off],
                Err(_) => 0.0,
            }
        };
        for j in (0..n).rev() {
            let ljj = self.l_val[lp[j]];
            let below = lp[j] + 1..lp[j + 1];
            for p in below.clone().rev() {
                let i = self.l_idx[p];
                let mut s = 0.0;
                for q in below.clone() {
                    s += self.l_val[q] * lookup(&sigma, i, self.l_idx[q]);
                }
                sigma[p] = -s / ljj;
            }
            let mut s = 0.0;
            for q in below {
                s += self.l_val[q] * sigma[q];
            }
            sigma[lp[j]] = 1.0 / (ljj * ljj) - s / ljj;
        }
        let mut out = vec![0.0; n];
        for (k, &p) in self.sym.perm.iter().enumerate() {
            out[p] = sigma[lp[k]];
        }
        out
    }
}

/// Convenience: analyze and factor in one step.
pub fn cholesky(a: &SymMatrix) -> Result<CholeskyFactor> {
    let sym = Arc::new(SymbolicCholesky::analyze(a.pattern())?);
    CholeskyFactor::factor(&sym, a)
}
