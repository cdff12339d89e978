//! Small dense helpers over `faer::Mat`.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use super::band::PIVOT_TOLERANCE;
use crate::error::{Error, Result};

pub type DenseMatrix = Mat<f64>;

/// Dense Cholesky factor `L Lᵀ = A` of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct DenseCholesky {
    llt: faer::linalg::solvers::Llt<f64>,
}

/// Factorises the lower triangle of `a`, with the same relative pivot floor
/// as the band factorisation.
pub fn dense_cholesky(a: &Mat<f64>) -> Result<DenseCholesky> {
    let n = a.nrows();
    if n != a.ncols() || n == 0 {
        return Err(Error::DimensionMismatch(format!(
            "Cholesky needs a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0_f64, f64::max);
    let floor = PIVOT_TOLERANCE * max_diag;
    let llt = a.llt(Side::Lower).map_err(|e| match e {
        faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot { index } => {
            Error::NotPositiveDefinite { row: index, pivot: f64::NAN }
        }
    })?;
    let l = llt.L();
    for i in 0..n {
        let pivot = l[(i, i)] * l[(i, i)];
        if !(pivot > floor) || !pivot.is_finite() {
            return Err(Error::NotPositiveDefinite { row: i, pivot });
        }
    }
    Ok(DenseCholesky { llt })
}

impl DenseCholesky {
    pub fn n(&self) -> usize {
        self.llt.L().nrows()
    }

    pub fn l(&self) -> faer::MatRef<'_, f64> {
        self.llt.L()
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} against factor of size {}",
                b.len(),
                self.n()
            )));
        }
        let mut x = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        self.llt.solve_in_place(x.as_mut());
        Ok((0..b.len()).map(|i| x[(i, 0)]).collect())
    }

    /// `A⁻¹ B`.
    pub fn solve_mat(&self, b: &Mat<f64>) -> Result<Mat<f64>> {
        if b.nrows() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "{} right-hand-side rows against factor of size {}",
                b.nrows(),
                self.n()
            )));
        }
        let mut x = b.clone();
        self.llt.solve_in_place(x.as_mut());
        Ok(x)
    }

    /// `L⁻¹ B`.
    pub fn forward_mat(&self, b: &Mat<f64>) -> Mat<f64> {
        let mut x = b.clone();
        faer::linalg::triangular_solve::solve_lower_triangular_in_place(
            self.llt.L(),
            x.as_mut(),
            faer::Par::Seq,
        );
        x
    }

    /// `L⁻ᵀ b`.
    pub fn backward_vec(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        faer::linalg::triangular_solve::solve_upper_triangular_in_place(
            self.llt.L().transpose(),
            x.as_mut(),
            faer::Par::Seq,
        );
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.llt.L();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> Mat<f64> {
        let mut x = Mat::<f64>::identity(self.n(), self.n());
        self.llt.solve_in_place(x.as_mut());
        x
    }
}

pub fn frobenius_norm(a: &Mat<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)] * a[(i, j)];
        }
    }
    s.sqrt()
}

/// `‖A − B‖_F / ‖B‖_F`.
pub fn relative_frobenius(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    frobenius_norm(&(a - b)) / frobenius_norm(b)
}

pub fn mat_vec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.ncols(), x.len(), "matrix-vector dimension mismatch");
    let mut y = vec![0.0; a.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            let col = a.col(j);
            for (yi, aij) in y.iter_mut().zip(col.iter()) {
                *yi += aij * xj;
            }
        }
    }
    y
}

pub fn mat_t_vec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.nrows(), x.len(), "matrix-vector dimension mismatch");
    (0..a.ncols())
        .map(|j| a.col(j).iter().zip(x).map(|(aij, xi)| aij * xi).sum())
        .collect()
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &Mat<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| 0.5 * (a[(i, j)] + a[(j, i)]))
}

pub fn diag_matrix(d: &[f64]) -> Mat<f64> {
    Mat::from_fn(d.len(), d.len(), |i, j| if i == j { d[i] } else { 0.0 })
}
