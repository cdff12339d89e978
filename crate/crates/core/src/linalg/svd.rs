//! Deterministic singular value decompositions of dense matrices.
//!
//! Output is normalised so that identical inputs give identical bits:
//! singular values descend, and in every left singular vector the entry of
//! largest magnitude (first one on ties) is non-negative. The matching right
//! vector is flipped along with it.

use faer::{Mat, Side};

use crate::error::{Error, Result};

/// Orthogonality tolerance used by the unit and property tests.
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Mat<f64>,
    pub sigma: Vec<f64>,
    pub v: Mat<f64>,
}

impl SvdResult {
    /// `U diag(sigma) Vᵀ`.
    pub fn reconstruct(&self) -> Mat<f64> {
        let us = Mat::from_fn(self.u.nrows(), self.sigma.len(), |i, j| self.u[(i, j)] * self.sigma[j]);
        &us * self.v.transpose()
    }

    fn normalise_signs(&mut self) {
        for j in 0..self.u.ncols() {
            let mut best = 0;
            let mut best_abs = -1.0;
            for i in 0..self.u.nrows() {
                let a = self.u[(i, j)].abs();
                if a > best_abs {
                    best = i;
                    best_abs = a;
                }
            }
            if self.u[(best, j)] < 0.0 {
                for i in 0..self.u.nrows() {
                    self.u[(i, j)] = -self.u[(i, j)];
                }
                for i in 0..self.v.nrows() {
                    self.v[(i, j)] = -self.v[(i, j)];
                }
            }
        }
    }
}

/// Full SVD of a square or rectangular matrix.
pub fn svd_dense(a: &Mat<f64>) -> Result<SvdResult> {
    let (rows, cols) = (a.nrows(), a.ncols());
    if a.col_iter().any(|c| c.iter().any(|x| !x.is_finite())) {
        return Err(Error::DimensionMismatch(format!("non-finite entry in {rows}x{cols} SVD input")));
    }
    let svd = a.thin_svd().map_err(|_| Error::ConvergenceFailure { rows, cols })?;
    let s = svd.S().column_vector();
    let mut out = SvdResult {
        u: svd.U().to_owned(),
        sigma: (0..s.nrows()).map(|i| s[i]).collect(),
        v: svd.V().to_owned(),
    };
    out.normalise_signs();
    Ok(out)
}

/// SVD of a symmetric matrix via its eigendecomposition.
///
/// For a positive definite input this is the SVD with `U = V`; negative
/// eigenvalues flip the corresponding right vector.
pub fn svd_symmetric(a: &Mat<f64>) -> Result<SvdResult> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "symmetric SVD needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let eig = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::ConvergenceFailure { rows: n, cols: n })?;
    let s = eig.S().column_vector();
    let vecs = eig.U();
    let lambda: Vec<f64> = (0..n).map(|i| s[i]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable, so equal magnitudes keep the ascending-eigenvalue order
    order.sort_by(|&i, &j| lambda[j].abs().total_cmp(&lambda[i].abs()));
    let u = Mat::from_fn(n, n, |i, j| vecs[(i, order[j])]);
    let v = Mat::from_fn(n, n, |i, j| {
        let k = order[j];
        if lambda[k] < 0.0 {
            -vecs[(i, k)]
        } else {
            vecs[(i, k)]
        }
    });
    let sigma = order.iter().map(|&k| lambda[k].abs()).collect();
    let mut out = SvdResult { u, sigma, v };
    out.normalise_signs();
    Ok(out)
}
