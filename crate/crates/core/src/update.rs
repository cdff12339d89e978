//! Optimal deterministic member update `x̃ = B(x − μ) + μ + K(y − Hμ)`.
//!
//! With `Q = V D Vᵀ`, `Q + HᵀRH = U Λ Uᵀ` and
//! `Z = Λ^{-1/2} Uᵀ V D^{-1/2} = P G Fᵀ`, the matrix
//! `B = U Λ^{-1/2} P Fᵀ D^{1/2} Vᵀ` satisfies `B Q⁻¹ Bᵀ = (Q + HᵀRH)⁻¹`.

use faer::Mat;

use crate::error::{Error, Result};
use crate::linalg::band::{cholesky_band, solve_band, BandMatrix};
use crate::linalg::dense::{dense_cholesky, mat_t_vec, mat_vec};
use crate::linalg::svd::{svd_dense, svd_symmetric, SvdResult};
use crate::observation::ObservationModel;
use crate::sampler::Theta;

/// Relative floor below which a singular value counts as zero.
pub const SINGULAR_FLOOR: f64 = 1e-12;

fn check_spectrum(sigma: &[f64]) -> Result<()> {
    let max = sigma.first().copied().unwrap_or(0.0);
    let floor = SINGULAR_FLOOR * max;
    match sigma.iter().position(|&s| !(s > floor)) {
        Some(index) => Err(Error::SingularSpectrum { index, value: sigma[index], floor }),
        None if max > 0.0 => Ok(()),
        None => Err(Error::SingularSpectrum { index: 0, value: max, floor }),
    }
}

fn scale_columns(a: &Mat<f64>, s: &[f64]) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s[j])
}

fn scale_rows(a: &Mat<f64>, s: &[f64]) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| s[i] * a[(i, j)])
}

/// `B` from the decompositions `Q = V D Vᵀ` and `Q̃ = U Λ Uᵀ`.
pub fn compute_b_from_decompositions(prior: &SvdResult, posterior: &SvdResult) -> Result<Mat<f64>> {
    let n = prior.sigma.len();
    if posterior.sigma.len() != n || prior.u.nrows() != n || posterior.u.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "prior decomposition of size {n} against posterior of size {}",
            posterior.sigma.len()
        )));
    }
    check_spectrum(&prior.sigma)?;
    check_spectrum(&posterior.sigma)?;
    let d_inv_sqrt: Vec<f64> = prior.sigma.iter().map(|s| 1.0 / s.sqrt()).collect();
    let d_sqrt: Vec<f64> = prior.sigma.iter().map(|s| s.sqrt()).collect();
    let l_inv_sqrt: Vec<f64> = posterior.sigma.iter().map(|s| 1.0 / s.sqrt()).collect();

    let utv = posterior.u.transpose() * &prior.u;
    let z = scale_columns(&scale_rows(&utv, &l_inv_sqrt), &d_inv_sqrt);
    let zs = svd_dense(&z)?;
    check_spectrum(&zs.sigma)?;

    let left = &scale_columns(&posterior.u, &l_inv_sqrt) * &zs.u;
    let right = scale_columns(&prior.u, &d_sqrt) * &zs.v;
    Ok(left * right.transpose())
}

/// `B` for a dense prior precision `Q` and posterior precision `Q̃ = Q + HᵀRH`.
pub fn compute_b_from_precisions(q: &Mat<f64>, q_tilde: &Mat<f64>) -> Result<Mat<f64>> {
    compute_b_from_decompositions(&svd_symmetric(q)?, &svd_symmetric(q_tilde)?)
}

/// `B` for dense `Q`, `H` and observation precision `R`.
pub fn compute_b(q: &Mat<f64>, h: &Mat<f64>, r: &Mat<f64>) -> Result<Mat<f64>> {
    let q_tilde = posterior_precision_dense(q, h, r)?;
    compute_b_from_precisions(q, &q_tilde)
}

fn posterior_precision_dense(q: &Mat<f64>, h: &Mat<f64>, r: &Mat<f64>) -> Result<Mat<f64>> {
    let n = q.nrows();
    if q.ncols() != n || h.ncols() != n || r.nrows() != h.nrows() || r.ncols() != h.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "Q is {}x{}, H is {}x{}, R is {}x{}",
            q.nrows(),
            q.ncols(),
            h.nrows(),
            h.ncols(),
            r.nrows(),
            r.ncols()
        )));
    }
    let rh = r * h;
    let info = h.transpose() * &rh;
    Ok(Mat::from_fn(n, n, |i, j| q[(i, j)] + 0.5 * (info[(i, j)] + info[(j, i)])))
}

/// `K v = (Q + HᵀRH)⁻¹ HᵀR v` via a band solve; `K` itself is never formed.
pub fn kalman_gain_apply(q: &BandMatrix, obs: &ObservationModel, v: &[f64]) -> Result<Vec<f64>> {
    if q.n() != obs.n_x() {
        return Err(Error::DimensionMismatch(format!(
            "precision of size {} with {} state columns in H",
            q.n(),
            obs.n_x()
        )));
    }
    let q_tilde = q.sum(&obs.information()?)?;
    let factor = cholesky_band(&q_tilde)?;
    solve_band(&factor, &obs.weighted_transpose(v)?)
}

/// The affine map `x ↦ B(x − μ) + μ + K(y − Hμ)` for one member's θ.
#[derive(Debug, Clone)]
pub struct UpdateOperator {
    pub b: Mat<f64>,
    pub mu: Vec<f64>,
    /// `K(y − Hμ)`.
    pub gain_shift: Vec<f64>,
}

impl UpdateOperator {
    /// Builds the operator from a band θ and a sparse observation model.
    pub fn new(theta: &Theta, y: &[f64], obs: &ObservationModel) -> Result<Self> {
        let n = theta.n();
        if theta.q.n() != n || obs.n_x() != n {
            return Err(Error::DimensionMismatch(format!(
                "mean of length {n}, precision of size {}, H with {} columns",
                theta.q.n(),
                obs.n_x()
            )));
        }
        let q_tilde = theta.q.sum(&obs.information()?)?;
        let factor = cholesky_band(&q_tilde)?;
        let innov = obs.innovation(y, &theta.mu)?;
        let gain_shift = solve_band(&factor, &obs.weighted_transpose(&innov)?)?;
        let b = compute_b_from_precisions(&theta.q.to_dense(), &q_tilde.to_dense())?;
        Ok(Self { b, mu: theta.mu.clone(), gain_shift })
    }

    /// Builds the operator from dense `(μ, Q)`, `H` and observation precision `R`.
    pub fn new_dense(mu: &[f64], q: &Mat<f64>, y: &[f64], h: &Mat<f64>, r: &Mat<f64>) -> Result<Self> {
        let q_tilde = posterior_precision_dense(q, h, r)?;
        if mu.len() != q.nrows() || y.len() != h.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "mean of length {}, observations of length {}, H is {}x{}",
                mu.len(),
                y.len(),
                h.nrows(),
                h.ncols()
            )));
        }
        let hmu = mat_vec(h, mu);
        let innov: Vec<f64> = y.iter().zip(&hmu).map(|(a, b)| a - b).collect();
        let rhs = mat_t_vec(h, &mat_vec(r, &innov));
        let gain_shift = dense_cholesky(&q_tilde)?.solve_vec(&rhs)?;
        let b = compute_b_from_precisions(q, &q_tilde)?;
        Ok(Self { b, mu: mu.to_vec(), gain_shift })
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mu.len() {
            return Err(Error::DimensionMismatch(format!(
                "member of length {} for an operator of size {}",
                x.len(),
                self.mu.len()
            )));
        }
        let d: Vec<f64> = x.iter().zip(&self.mu).map(|(a, b)| a - b).collect();
        let bd = mat_vec(&self.b, &d);
        Ok((0..x.len()).map(|i| bd[i] + self.mu[i] + self.gain_shift[i]).collect())
    }
}

/// Updates one member with its own θ.
pub fn optimal_update_member(x: &[f64], theta: &Theta, y: &[f64], obs: &ObservationModel) -> Result<Vec<f64>> {
    UpdateOperator::new(theta, y, obs)?.apply(x)
}
