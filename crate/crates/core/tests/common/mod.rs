//! Dense reference routines written independently of the crate's solvers.
#![allow(dead_code)]

use faer::Mat;
use menkf::linalg::band::BandMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normals<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn to_rows(a: &Mat<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect()).collect()
}

pub fn from_rows(a: &[Vec<f64>]) -> Mat<f64> {
    Mat::from_fn(a.len(), a.first().map_or(0, Vec::len), |i, j| a[i][j])
}

/// Gauss–Jordan elimination with partial pivoting; returns `(A⁻¹, log|det A|)`.
pub fn invert(a: &Mat<f64>) -> (Mat<f64>, f64) {
    let n = a.nrows();
    let mut m = to_rows(a);
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let mut logdet = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        m.swap(c, p);
        inv.swap(c, p);
        let piv = m[c][c];
        assert!(piv != 0.0, "singular matrix in reference inverse");
        logdet += piv.abs().ln();
        for j in 0..n {
            m[c][j] /= piv;
            inv[c][j] /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    for j in 0..n {
                        m[r][j] -= f * m[c][j];
                        inv[r][j] -= f * inv[c][j];
                    }
                }
            }
        }
    }
    (from_rows(&inv), logdet)
}

pub fn solve(a: &Mat<f64>, b: &[f64]) -> Vec<f64> {
    mv(&invert(a).0, b)
}

pub fn mv(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum()).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn fro(a: &Mat<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            s += a[(i, j)] * a[(i, j)];
        }
    }
    s.sqrt()
}

pub fn rel_fro(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    fro(&(a - b)) / fro(b)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn select(a: &Mat<f64>, rows: &[usize], cols: &[usize]) -> Mat<f64> {
    Mat::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

/// `G Gᵀ + shift·I` for a random `G`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, shift: f64) -> Mat<f64> {
    let g = Mat::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let a = &g * g.transpose();
    Mat::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]) + if i == j { shift } else { 0.0 })
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat<f64> {
    Mat::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Diagonally dominant symmetric band matrix with random off-diagonals.
pub fn random_spd_band<R: Rng>(rng: &mut R, n: usize, p: usize) -> BandMatrix {
    let mut q = BandMatrix::zeros(n, p);
    let mut row_abs = vec![0.0; n];
    for i in 0..n {
        for j in i.saturating_sub(p)..i {
            let v: f64 = rng.random_range(-1.0..1.0);
            q.set(i, j, v);
            row_abs[i] += v.abs();
            row_abs[j] += v.abs();
        }
    }
    for (i, s) in row_abs.iter().enumerate() {
        q.set(i, i, s + rng.random_range(0.5..2.0));
    }
    q
}

/// `log N(x; m, Σ)` for a covariance `Σ`.
pub fn gaussian_log_density_cov(x: &[f64], m: &[f64], cov: &Mat<f64>) -> f64 {
    let (inv, logdet) = invert(cov);
    let d = sub(x, m);
    let n = x.len() as f64;
    -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + logdet + dot(&d, &mv(&inv, &d)))
}

/// `log N(x; m, P⁻¹)` for a precision `P`.
pub fn gaussian_log_density_prec(x: &[f64], m: &[f64], p: &Mat<f64>) -> f64 {
    let (_, logdet) = invert(p);
    let d = sub(x, m);
    let n = x.len() as f64;
    -0.5 * (n * (2.0 * std::f64::consts::PI).ln() - logdet + dot(&d, &mv(p, &d)))
}

/// One regression observation `(x_k, w)` with design row `w = (1, x_{Λ_k})`.
pub type Row = (f64, Vec<f64>);

/// Unnormalised log of prior × likelihood for `(φ, η)` under the
/// inverse-gamma / Gaussian hyperprior with `Σ = sigma_diag·I` and `ζ = 0`.
pub fn log_prior_times_likelihood(phi: f64, eta: &[f64], rows: &[Row], alpha: f64, rate: f64, sigma_diag: f64) -> f64 {
    let p = eta.len() as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    let log_ig = -(alpha + 1.0) * phi.ln() - rate / phi;
    let log_eta = -0.5 * p * (two_pi * phi * sigma_diag).ln() - 0.5 * dot(eta, eta) / (phi * sigma_diag);
    let log_lik: f64 = rows
        .iter()
        .map(|(x, w)| -0.5 * (two_pi * phi).ln() - 0.5 * (x - dot(w, eta)).powi(2) / phi)
        .sum();
    log_ig + log_eta + log_lik
}

fn grid(lo: f64, hi: f64, n: usize) -> (Vec<f64>, f64) {
    let h = (hi - lo) / (n - 1) as f64;
    ((0..n).map(|i| lo + h * i as f64).collect(), h)
}

/// `log ∫ exp(f)` over `(log φ, η)` by the trapezoid rule on a box; `ranges[0]`
/// is the `log φ` range and the rest are `η` ranges (one or two).
pub fn log_evidence(f: impl Fn(f64, &[f64]) -> f64, ranges: &[(f64, f64)], points: &[usize]) -> f64 {
    let axes: Vec<(Vec<f64>, f64)> = ranges.iter().zip(points).map(|(&(lo, hi), &n)| grid(lo, hi, n)).collect();
    let weight = |i: usize, n: usize| -> f64 { if i == 0 || i + 1 == n { 0.5 } else { 1.0 } };
    let mut vals = Vec::new();
    let mut eta = vec![0.0; ranges.len() - 1];
    let (u_axis, _) = &axes[0];
    for (iu, &u) in u_axis.iter().enumerate() {
        let phi = u.exp();
        let wu = weight(iu, u_axis.len());
        let mut idx = vec![0usize; eta.len()];
        loop {
            let mut w = wu;
            for (d, &i) in idx.iter().enumerate() {
                eta[d] = axes[d + 1].0[i];
                w *= weight(i, axes[d + 1].0.len());
            }
            // dφ = φ du
            vals.push(f(phi, &eta) + u + w.ln());
            let mut d = 0;
            loop {
                if d == idx.len() {
                    break;
                }
                idx[d] += 1;
                if idx[d] < axes[d + 1].0.len() {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == idx.len() {
                break;
            }
        }
    }
    let cell: f64 = axes.iter().map(|(_, h)| h).product();
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + cell.ln()
}
