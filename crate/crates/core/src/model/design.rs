//! Sparse observation matrix mapping the latent vector to linear predictors.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sparse::SymMatrix;

const ROW_CHUNK: usize = 4096;

/// Row-wise builder; entries within a row are merged by column.
#[derive(Debug, Clone)]
pub struct DesignBuilder {
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    vals: Vec<f64>,
    scratch: Vec<(usize, f64)>,
}

impl DesignBuilder {
    pub fn new(n_cols: usize) -> Self {
        Self {
            n_cols,
            row_ptr: vec![0],
            col_idx: Vec::new(),
            vals: Vec::new(),
            scratch: Vec::new(),
        }
    }

    pub fn push_row(&mut self, entries: &[(usize, f64)]) -> Result<()> {
        self.scratch.clear();
        self.scratch.extend_from_slice(entries);
        self.scratch.sort_by_key(|e| e.0);
        let mut last: Option<usize> = None;
        for &(c, v) in &self.scratch {
            if c >= self.n_cols {
                return Err(Error::input(format!(
                    "design column {c} out of range ({} columns)",
                    self.n_cols
                )));
            }
            if last == Some(c) {
                *self.vals.last_mut().unwrap() += v;
            } else {
                self.col_idx.push(c as u32);
                self.vals.push(v);
                last = Some(c);
            }
        }
        self.row_ptr.push(self.col_idx.len());
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn build(self) -> Design {
        let n_rows = self.row_ptr.len() - 1;
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            counts[c as usize + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let col_ptr = counts.clone();
        let mut next = counts;
        let mut col_rows = vec![0u32; self.col_idx.len()];
        let mut col_vals = vec![0.0; self.col_idx.len()];
        for r in 0..n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k] as usize;
                col_rows[next[c]] = r as u32;
                col_vals[next[c]] = self.vals[k];
                next[c] += 1;
            }
        }
        Design {
            n_rows,
            n_cols: self.n_cols,
            row_ptr: self.row_ptr,
            col_idx: self.col_idx,
            vals: self.vals,
            col_ptr,
            col_rows,
            col_vals,
        }
    }
}

/// Observation matrix held in both row- and column-compressed form.
#[derive(Debug, Clone)]
pub struct Design {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    vals: Vec<f64>,
    col_ptr: Vec<usize>,
    col_rows: Vec<u32>,
    col_vals: Vec<f64>,
}

impl Design {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Entries of row `r` as (columns, values).
    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let s = self.row_ptr[r];
        let e = self.row_ptr[r + 1];
        (&self.col_idx[s..e], &self.vals[s..e])
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols);
        let mut out = vec![0.0; self.n_rows];
        out.par_chunks_mut(ROW_CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| {
                for (k, o) in chunk.iter_mut().enumerate() {
                    let (cols, vals) = self.row(c * ROW_CHUNK + k);
                    *o = cols.iter().zip(vals).map(|(&j, &v)| v * x[j as usize]).sum();
                }
            });
        out
    }

    /// `Dᵀ g`
    pub fn tmul(&self, g: &[f64]) -> Vec<f64> {
        assert_eq!(g.len(), self.n_rows);
        (0..self.n_cols)
            .into_par_iter()
            .map(|j| {
                let s = self.col_ptr[j];
                let e = self.col_ptr[j + 1];
                self.col_rows[s..e]
                    .iter()
                    .zip(&self.col_vals[s..e])
                    .map(|(&r, &v)| v * g[r as usize])
                    .sum()
            })
            .collect()
    }

    /// Lower-triangular structure of `DᵀD`, per column.
    pub fn gram_columns(&self) -> Vec<Vec<u32>> {
        (0..self.n_cols)
            .into_par_iter()
            .map_init(
                || vec![usize::MAX; self.n_cols],
                |mark, j| {
                    let mut rows = Vec::new();
                    for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                        let (cols, _) = self.row(self.col_rows[p] as usize);
                        for &k in cols {
                            let k = k as usize;
                            if k >= j && mark[k] != j {
                                mark[k] = j;
                                rows.push(k as u32);
                            }
                        }
                    }
                    rows
                },
            )
            .collect()
    }

    /// Adds `Dᵀ diag(w) D` into `target`, whose pattern must contain the
    /// structure from [`Design::gram_columns`].
    pub fn add_weighted_gram(&self, w: &[f64], target: &mut SymMatrix) {
        assert_eq!(w.len(), self.n_rows);
        let pattern = target.pattern().clone();
        let cols: Vec<Vec<f64>> = (0..self.n_cols)
            .into_par_iter()
            .map_init(
                || vec![0.0; self.n_cols],
                |acc, j| {
                    for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                        let r = self.col_rows[p] as usize;
                        let s = w[r] * self.col_vals[p];
                        let (cols, vals) = self.row(r);
                        for (&k, &v) in cols.iter().zip(vals) {
                            if k as usize >= j {
                                acc[k as usize] += s * v;
                            }
                        }
                    }
                    pattern
                        .column(j)
                        .iter()
                        .map(|&r| std::mem::take(&mut acc[r as usize]))
                        .collect()
                },
            )
            .collect();
        let values = target.values_mut();
        for (j, col) in cols.into_iter().enumerate() {
            let start = pattern.col_ptr()[j];
            for (off, v) in col.into_iter().enumerate() {
                values[start + off] += v;
            }
        }
    }
}
