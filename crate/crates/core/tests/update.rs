mod common;

use common::*;
use faer::Mat;
use menkf::linalg::band::{cholesky_band, sample_gaussian_precision, BandMatrix};
use menkf::linalg::sparse::SparseMatrix;
use menkf::linalg::svd::svd_symmetric;
use menkf::observation::ObservationModel;
use menkf::update::{compute_b, compute_b_from_decompositions, kalman_gain_apply, UpdateOperator};
use menkf::Theta;
use proptest::prelude::*;
use rand::Rng;

fn diag(d: &[f64]) -> Mat<f64> {
    Mat::from_fn(d.len(), d.len(), |i, j| if i == j { d[i] } else { 0.0 })
}

/// `‖B Q⁻¹ Bᵀ − (Q + HᵀRH)⁻¹‖_F / ‖(Q + HᵀRH)⁻¹‖_F`.
fn sb2_residual(b: &Mat<f64>, q: &Mat<f64>, h: &Mat<f64>, r: &Mat<f64>) -> f64 {
    let post = invert(&(q + h.transpose() * r * h)).0;
    let lhs = b * invert(q).0 * b.transpose();
    rel_fro(&lhs, &post)
}

#[test]
fn gain_matches_woodbury_form() {
    let mut g = rng(41);
    let q = random_spd_band(&mut g, 5, 2);
    let mut trip = Vec::new();
    for i in 0..3 {
        for j in 0..5 {
            if g.random_bool(0.6) {
                trip.push((i, j, g.random_range(-1.0..1.0)));
            }
        }
    }
    let h = SparseMatrix::from_triplets(3, 5, trip).unwrap();
    let prec: Vec<f64> = (0..3).map(|_| g.random_range(0.5..3.0)).collect();
    let obs = ObservationModel::new(h.clone(), prec.clone()).unwrap();
    let v = normals(&mut g, 3);
    let kv = kalman_gain_apply(&q, &obs, &v).unwrap();

    let qi = invert(&q.to_dense()).0;
    let hd = h.to_dense();
    let r_inv = diag(&prec.iter().map(|p| 1.0 / p).collect::<Vec<_>>());
    let inner = &hd * &qi * hd.transpose() + r_inv;
    let oracle = mv(&(&qi * hd.transpose()), &solve(&inner, &v));
    assert!(norm(&sub(&kv, &oracle)) / norm(&oracle) <= 1e-10);
}

#[test]
fn defining_equation_on_random_eight_by_eight() {
    let mut g = rng(42);
    let q = random_spd(&mut g, 8, 0.5);
    let h = random_matrix(&mut g, 5, 8);
    let r = random_spd(&mut g, 5, 1.0);
    let b = compute_b(&q, &h, &r).unwrap();
    assert!(sb2_residual(&b, &q, &h, &r) <= 1e-8);
}

#[test]
fn b_ignores_singular_vector_signs() {
    let mut g = rng(43);
    let q = random_spd(&mut g, 6, 0.5);
    let h = random_matrix(&mut g, 4, 6);
    let r = random_spd(&mut g, 4, 1.0);
    let qt = &q + h.transpose() * &r * &h;
    let (prior, post) = (svd_symmetric(&q).unwrap(), svd_symmetric(&qt).unwrap());
    let b = compute_b_from_decompositions(&prior, &post).unwrap();
    let (mut p2, mut t2) = (prior.clone(), post.clone());
    for j in [0, 3, 5] {
        for i in 0..6 {
            p2.u[(i, j)] = -p2.u[(i, j)];
            p2.v[(i, j)] = -p2.v[(i, j)];
        }
    }
    for j in [1, 2] {
        for i in 0..6 {
            t2.u[(i, j)] = -t2.u[(i, j)];
            t2.v[(i, j)] = -t2.v[(i, j)];
        }
    }
    let b2 = compute_b_from_decompositions(&p2, &t2).unwrap();
    assert!(rel_fro(&b2, &b) <= 1e-10);
}

#[test]
fn update_maps_prior_onto_exact_posterior() {
    let mut g = rng(44);
    let q = random_spd(&mut g, 6, 0.5);
    let h = random_matrix(&mut g, 3, 6);
    let r = random_spd(&mut g, 3, 1.0);
    let mu = normals(&mut g, 6);
    let y = normals(&mut g, 3);
    let op = UpdateOperator::new_dense(&mu, &q, &y, &h, &r).unwrap();

    // x̃ = B x + c with x ~ N(μ, Q⁻¹): mean Bμ + c, covariance B Q⁻¹ Bᵀ.
    let qt = &q + h.transpose() * &r * &h;
    let post_mean = solve(&qt, &add(&mv(&q, &mu), &mv(&(h.transpose() * &r), &y)));
    assert!(max_abs_diff(&op.apply(&mu).unwrap(), &post_mean) <= 1e-10);
    assert!(sb2_residual(&op.b, &q, &h, &r) <= 1e-8);
}

#[test]
fn monte_carlo_moments_match_posterior() {
    let mut g = rng(45);
    let mut q = BandMatrix::zeros(3, 2);
    for (i, j, v) in [(0, 0, 2.0), (1, 1, 1.5), (2, 2, 3.0), (1, 0, -0.6), (2, 1, 0.4), (2, 0, 0.2)] {
        q.set(i, j, v);
    }
    let mu = vec![1.0, -0.5, 0.3];
    let h = SparseMatrix::from_triplets(2, 3, vec![(0, 0, 1.0), (0, 1, 0.5), (1, 2, 1.0)]).unwrap();
    let obs = ObservationModel::new(h.clone(), vec![2.0, 0.5]).unwrap();
    let y = vec![0.4, 1.2];
    let theta = Theta { mu: mu.clone(), q: q.clone() };
    let op = UpdateOperator::new(&theta, &y, &obs).unwrap();
    let factor = cholesky_band(&q).unwrap();

    let n = 10_000;
    let draws: Vec<Vec<f64>> = (0..n)
        .map(|_| op.apply(&sample_gaussian_precision(&mu, &factor, &normals(&mut g, 3)).unwrap()).unwrap())
        .collect();
    let mean: Vec<f64> = (0..3).map(|i| draws.iter().map(|d| d[i]).sum::<f64>() / n as f64).collect();
    let cov = Mat::from_fn(3, 3, |i, j| {
        draws.iter().map(|d| (d[i] - mean[i]) * (d[j] - mean[j])).sum::<f64>() / (n - 1) as f64
    });

    let hd = h.to_dense();
    let rd = diag(&[2.0, 0.5]);
    let qt = q.to_dense() + hd.transpose() * &rd * &hd;
    let post_cov = invert(&qt).0;
    let post_mean = solve(&qt, &add(&mv(&q.to_dense(), &mu), &mv(&(hd.transpose() * &rd), &y)));
    for i in 0..3 {
        let se = (post_cov[(i, i)] / n as f64).sqrt();
        assert!((mean[i] - post_mean[i]).abs() <= 3.0 * se, "mean {i}");
        for j in 0..3 {
            let var = post_cov[(i, i)] * post_cov[(j, j)] + post_cov[(i, j)].powi(2);
            let se = (var / n as f64).sqrt();
            assert!((cov[(i, j)] - post_cov[(i, j)]).abs() <= 3.0 * se, "cov ({i}, {j})");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn defining_equation_holds(n in 1usize..=12, ny in 1usize..=12, seed in any::<u64>()) {
        let mut g = rng(seed);
        let q = random_spd(&mut g, n, 0.5);
        let h = random_matrix(&mut g, ny, n);
        let r = random_spd(&mut g, ny, 1.0);
        let b = compute_b(&q, &h, &r).unwrap();
        prop_assert!(sb2_residual(&b, &q, &h, &r) <= 1e-8);
    }
}
