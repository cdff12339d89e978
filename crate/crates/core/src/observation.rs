use crate::error::{Error, Result};
use crate::linalg::band::BandMatrix;
use crate::linalg::sparse::SparseMatrix;

/// Linear Gaussian observation `y ~ N(Hx, R)` with `R` a diagonal precision.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    h: SparseMatrix,
    r: Vec<f64>,
}

impl ObservationModel {
    pub fn new(h: SparseMatrix, r: Vec<f64>) -> Result<Self> {
        if r.len() != h.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} observation precisions for {} observation rows",
                r.len(),
                h.nrows()
            )));
        }
        if r.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::DimensionMismatch("observation precisions must be positive".into()));
        }
        Ok(Self { h, r })
    }

    /// `H = 0` with `n_y = n_x` and unit precision.
    pub fn uninformative(n: usize) -> Self {
        Self { h: SparseMatrix::zeros(n, n), r: vec![1.0; n] }
    }

    pub fn h(&self) -> &SparseMatrix {
        &self.h
    }

    /// Diagonal of the observation precision `R`.
    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn n_y(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_x(&self) -> usize {
        self.h.ncols()
    }

    /// `Hᵀ R H` as a band matrix.
    pub fn information(&self) -> Result<BandMatrix> {
        self.h.weighted_gram(&self.r)
    }

    /// `Hᵀ R v`, scaling by `R` before the transpose product.
    pub fn weighted_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.r.len() {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} against {} observations",
                v.len(),
                self.r.len()
            )));
        }
        let rv: Vec<f64> = v.iter().zip(&self.r).map(|(a, b)| a * b).collect();
        self.h.mul_transpose_vec(&rv)
    }

    /// `y − H x`.
    pub fn innovation(&self, y: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.n_y() {
            return Err(Error::DimensionMismatch(format!(
                "observation vector of length {} for {} observations",
                y.len(),
                self.n_y()
            )));
        }
        let hx = self.h.mul_vec(x)?;
        Ok(y.iter().zip(&hx).map(|(a, b)| a - b).collect())
    }
}
