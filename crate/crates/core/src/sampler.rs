//! Two-block Gibbs sampler for `θ = (μ, Q)` given the other ensemble members
//! and the current observation.

use faer::Mat;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::band::{cholesky_band, sample_gaussian_precision, solve_band, BandCholesky, BandMatrix};
use crate::linalg::dense::dense_cholesky;
use crate::observation::ObservationModel;
use crate::pomm::{assemble_mean, assemble_precision, HyperParams, NeighbourhoodScheme, PommParams};

/// Default number of Gibbs iterations.
pub const DEFAULT_GIBBS_ITERS: usize = 5;

/// Relative tolerance on the completed-square residual before it counts as negative.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

/// Prior mean and precision of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub mu: Vec<f64>,
    pub q: BandMatrix,
}

impl Theta {
    pub fn from_params(params: &PommParams, scheme: &NeighbourhoodScheme) -> Result<Self> {
        let q = assemble_precision(params, scheme)?;
        let (mu, _) = assemble_mean(params, scheme, &q)?;
        Ok(Self { mu, q })
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }
}

/// The other members `z^(m)` together with the data for member `m`.
#[derive(Debug, Clone, Copy)]
pub struct ConditioningSet<'a> {
    pub members: &'a [&'a [f64]],
    pub y: &'a [f64],
    pub obs: &'a ObservationModel,
}

impl ConditioningSet<'_> {
    fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::DimensionMismatch("conditioning set has no members".into()));
        }
        let n = self.obs.n_x();
        if let Some(bad) = self.members.iter().find(|m| m.len() != n) {
            return Err(Error::DimensionMismatch(format!("member of length {} for {} nodes", bad.len(), n)));
        }
        if self.y.len() != self.obs.n_y() {
            return Err(Error::DimensionMismatch(format!(
                "observation vector of length {} for {} observations",
                self.y.len(),
                self.obs.n_y()
            )));
        }
        Ok(())
    }

    /// `(1/(M−1)) Σ_{i≠m} x^(i)`.
    pub fn member_mean(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.members[0].len()];
        for m in self.members {
            for (a, b) in x.iter_mut().zip(m.iter()) {
                *a += b;
            }
        }
        let c = 1.0 / self.members.len() as f64;
        x.iter_mut().for_each(|a| *a *= c);
        x
    }
}

/// Moments of `x | θ, y`: precision `Q + HᵀRH` and its mean, plus the factor.
pub fn full_conditional_x(
    mu: &[f64],
    q: &BandMatrix,
    y: &[f64],
    obs: &ObservationModel,
) -> Result<(Vec<f64>, BandMatrix, BandCholesky)> {
    if mu.len() != q.n() || obs.n_x() != q.n() {
        return Err(Error::DimensionMismatch(format!(
            "mean of length {}, precision of size {}, observation operator with {} columns",
            mu.len(),
            q.n(),
            obs.n_x()
        )));
    }
    let q_tilde = q.sum(&obs.information()?)?;
    let factor = cholesky_band(&q_tilde)?;
    let innov = obs.innovation(y, mu)?;
    let rhs = obs.weighted_transpose(&innov)?;
    let shift = solve_band(&factor, &rhs)?;
    let mu_tilde = mu.iter().zip(&shift).map(|(a, b)| a + b).collect();
    Ok((mu_tilde, q_tilde, factor))
}

/// Conjugate posterior of `(φ_k, η_k)` for one node.
#[derive(Debug, Clone)]
pub struct PosteriorStats {
    pub gamma: f64,
    pub rho: Vec<f64>,
    pub theta: Mat<f64>,
    pub alpha_tilde: f64,
    /// `1/β̃`.
    pub rate_tilde: f64,
    /// `Θ⁻¹ ρ`.
    pub eta_mean: Vec<f64>,
    factor: crate::linalg::dense::DenseCholesky,
}

impl PosteriorStats {
    /// Statistics from the columns `χ^k` (node values) and `χ^{Λ_k}` (one
    /// neighbour vector per column).
    pub fn new(
        node: usize,
        chi_k: &[f64],
        chi_lambda: &[Vec<f64>],
        hyper: &crate::pomm::NodeHyper,
    ) -> Result<Self> {
        let p = hyper.zeta().len();
        let mut theta = hyper.sigma_inv().clone();
        let mut rho = hyper.sigma_inv_zeta().to_vec();
        let mut gamma = hyper.zeta_quad();
        let mut w = vec![0.0; p];
        for (xk, xl) in chi_k.iter().zip(chi_lambda) {
            w[0] = 1.0;
            w[1..].copy_from_slice(xl);
            for a in 0..p {
                rho[a] += w[a] * xk;
                for b in 0..p {
                    theta[(a, b)] += w[a] * w[b];
                }
            }
            gamma += xk * xk;
        }
        let factor = dense_cholesky(&theta)?;
        let eta_mean = factor.solve_vec(&rho)?;
        let quad: f64 = rho.iter().zip(&eta_mean).map(|(a, b)| a * b).sum();
        let mut residual = gamma - quad;
        if residual < 0.0 {
            if residual < -RESIDUAL_TOLERANCE * gamma.max(1.0) {
                return Err(Error::DegenerateStats { node, residual });
            }
            residual = 0.0;
        }
        let rate_tilde = hyper.rate() + 0.5 * residual;
        let alpha_tilde = hyper.alpha() + 0.5 * chi_k.len() as f64;
        if !(rate_tilde > 0.0) || !(alpha_tilde > 0.0) {
            return Err(Error::DegenerateStats { node, residual });
        }
        Ok(Self { gamma, rho, theta, alpha_tilde, rate_tilde, eta_mean, factor })
    }

    /// Draws `φ ~ InvGam(α̃, β̃)` then `η ~ N(Θ⁻¹ρ, cov φ Θ⁻¹)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, Vec<f64>) {
        let g = Gamma::new(self.alpha_tilde, 1.0 / self.rate_tilde).expect("positive gamma parameters");
        let phi = 1.0 / g.sample(rng);
        let z: Vec<f64> = (0..self.eta_mean.len()).map(|_| StandardNormal.sample(rng)).collect();
        let w = self.factor.backward_vec(&z);
        let s = phi.sqrt();
        let eta = self.eta_mean.iter().zip(&w).map(|(m, d)| m + s * d).collect();
        (phi, eta)
    }

    /// Normalised log posterior density of `(φ, η)`.
    pub fn log_density(&self, phi: f64, eta: &[f64]) -> f64 {
        let a = self.alpha_tilde;
        let b = self.rate_tilde;
        let log_ig = a * b.ln() - ln_gamma(a) - (a + 1.0) * phi.ln() - b / phi;
        let p = eta.len() as f64;
        let d: Vec<f64> = eta.iter().zip(&self.eta_mean).map(|(x, m)| x - m).collect();
        let mut quad = 0.0;
        for i in 0..d.len() {
            for j in 0..d.len() {
                quad += d[i] * self.theta[(i, j)] * d[j];
            }
        }
        let log_n = -0.5 * p * (2.0 * std::f64::consts::PI * phi).ln() + 0.5 * self.factor.log_det() - 0.5 * quad / phi;
        log_ig + log_n
    }
}

/// Posterior statistics for node `k` from the conditioning members and the auxiliary state.
pub fn node_posterior(
    k: usize,
    x: &[f64],
    cond: &ConditioningSet<'_>,
    hyper: &HyperParams,
    scheme: &NeighbourhoodScheme,
) -> Result<PosteriorStats> {
    let lambda = scheme.neighbours(k);
    let columns = cond.members.iter().copied().chain(std::iter::once(x));
    let mut chi_k = Vec::with_capacity(cond.members.len() + 1);
    let mut chi_l = Vec::with_capacity(cond.members.len() + 1);
    for col in columns {
        chi_k.push(col[k]);
        chi_l.push(lambda.iter().map(|&l| col[l]).collect());
    }
    PosteriorStats::new(k, &chi_k, &chi_l, hyper.node(k))
}

/// Draws `(φ, η)` from their full conditional given `x` and the other members.
pub fn sample_phi_eta_posterior<R: Rng + ?Sized>(
    x: &[f64],
    cond: &ConditioningSet<'_>,
    hyper: &HyperParams,
    scheme: &NeighbourhoodScheme,
    rng: &mut R,
) -> Result<PommParams> {
    cond.validate()?;
    if x.len() != scheme.n() || hyper.n() != scheme.n() || cond.obs.n_x() != scheme.n() {
        return Err(Error::DimensionMismatch(format!(
            "state of length {}, {} node priors, {} nodes",
            x.len(),
            hyper.n(),
            scheme.n()
        )));
    }
    let mut phi = Vec::with_capacity(scheme.n());
    let mut eta = Vec::with_capacity(scheme.n());
    for k in 0..scheme.n() {
        let stats = node_posterior(k, x, cond, hyper, scheme)?;
        let (p, e) = stats.sample(rng);
        phi.push(p);
        eta.push(e);
    }
    Ok(PommParams { phi, eta })
}

/// Runs `n_iter` sweeps of (θ | x) then (x | θ, y), starting from the mean of
/// the conditioning members, and returns the last θ. The trailing x draw of
/// the final sweep is skipped since it is discarded.
pub fn gibbs_sample_theta<R: Rng + ?Sized>(
    cond: &ConditioningSet<'_>,
    hyper: &HyperParams,
    scheme: &NeighbourhoodScheme,
    n_iter: usize,
    rng: &mut R,
) -> Result<Theta> {
    if n_iter == 0 {
        return Err(Error::Config("the Gibbs sampler needs at least one iteration".into()));
    }
    cond.validate()?;
    let mut x = cond.member_mean();
    let mut theta = None;
    for iter in 0..n_iter {
        let params = sample_phi_eta_posterior(&x, cond, hyper, scheme, rng)?;
        let q = assemble_precision(&params, scheme)?;
        let (mu, _) = assemble_mean(&params, scheme, &q)?;
        if iter + 1 < n_iter {
            let (mu_t, _, factor) = full_conditional_x(&mu, &q, cond.y, cond.obs)?;
            let z: Vec<f64> = (0..mu.len()).map(|_| StandardNormal.sample(rng)).collect();
            x = sample_gaussian_precision(&mu_t, &factor, &z)?;
        }
        theta = Some(Theta { mu, q });
    }
    Ok(theta.expect("at least one iteration"))
}
