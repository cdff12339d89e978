use faer::Mat;

use super::band::BandMatrix;
use crate::error::{Error, Result};

/// Compressed sparse row matrix, used for the observation operator `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// explicit zeros dropped.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= rows || *c >= cols) {
            return Err(Error::DimensionMismatch(format!(
                "triplet ({r}, {c}) outside a {rows}x{cols} matrix"
            )));
        }
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_ptr[r + 1] += 1;
                col_idx.push(c);
                values.push(v);
                last = Some((r, c));
            }
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut m = Self { rows, cols, row_ptr, col_idx, values };
        m.prune_zeros();
        Ok(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, row_ptr: vec![0; rows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    fn prune_zeros(&mut self) {
        let mut row_ptr = vec![0usize; self.rows + 1];
        let mut col_idx = Vec::with_capacity(self.col_idx.len());
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.values[k] != 0.0 {
                    col_idx.push(self.col_idx[k]);
                    values.push(self.values[k]);
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }
        self.row_ptr = row_ptr;
        self.col_idx = col_idx;
        self.values = values;
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of row `r`, columns ascending.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|(j, _)| *j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} against {}x{} sparse matrix",
                x.len(),
                self.rows,
                self.cols
            )));
        }
        Ok((0..self.rows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect())
    }

    /// `Hᵀ y`.
    pub fn mul_transpose_vec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} against transpose of {}x{} sparse matrix",
                y.len(),
                self.rows,
                self.cols
            )));
        }
        let mut x = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                for (c, v) in self.row(r) {
                    x[c] += v * yr;
                }
            }
        }
        Ok(x)
    }

    /// Largest column spread within a single row; bounds the bandwidth of `Hᵀ W H`.
    pub fn row_spread(&self) -> usize {
        (0..self.rows)
            .filter_map(|r| {
                let span = &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]];
                Some(span.last()? - span.first()?)
            })
            .max()
            .unwrap_or(0)
    }

    /// `Hᵀ diag(w) H` as a band matrix, accumulated row by row.
    pub fn weighted_gram(&self, w: &[f64]) -> Result<BandMatrix> {
        if w.len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} rows",
                w.len(),
                self.rows
            )));
        }
        let mut g = BandMatrix::zeros(self.cols, self.row_spread());
        for (r, &wr) in w.iter().enumerate() {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            let cols = &self.col_idx[span.clone()];
            let vals = &self.values[span];
            for a in 0..cols.len() {
                for b in 0..=a {
                    g.add(cols[a], cols[b], wr * vals[a] * vals[b]);
                }
            }
        }
        Ok(g)
    }

    /// Indicator over rows: does row `r` touch any column flagged in `mask`?
    pub fn rows_touching(&self, mask: &[bool]) -> Vec<usize> {
        (0..self.rows).filter(|&r| self.row(r).any(|(c, _)| mask[c])).collect()
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut a = Mat::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                a[(r, c)] = v;
            }
        }
        a
    }
}
