mod common;

use std::collections::BTreeSet;

use common::*;
use menkf::lattice::LatticeGeometry;
use menkf::linalg::band::{cholesky_band, gaussian_log_density};
use menkf::pomm::{
    assemble_mean, assemble_precision, build_neighbourhood, sparsity_bound, NeighbourhoodScheme, PommParams,
    TEN_NODE_TEMPLATE,
};
use proptest::prelude::*;
use rand::Rng;

fn random_params<R: Rng>(rng: &mut R, scheme: &NeighbourhoodScheme, eta_scale: f64) -> PommParams {
    let phi = (0..scheme.n()).map(|_| rng.random_range(0.2..5.0)).collect();
    let eta = (0..scheme.n())
        .map(|k| (0..=scheme.neighbours(k).len()).map(|_| rng.random_range(-eta_scale..eta_scale)).collect())
        .collect();
    PommParams { phi, eta }
}

/// `Σ_k log N(x_k; η_k0 + Σ_j η_kj x_{Λ_k(j)}, φ_k)`.
fn conditional_log_density(params: &PommParams, scheme: &NeighbourhoodScheme, x: &[f64]) -> f64 {
    (0..scheme.n())
        .map(|k| {
            let eta = &params.eta[k];
            let m = eta[0] + scheme.neighbours(k).iter().zip(&eta[1..]).map(|(&l, e)| e * x[l]).sum::<f64>();
            let phi = params.phi[k];
            -0.5 * ((2.0 * std::f64::consts::PI * phi).ln() + (x[k] - m).powi(2) / phi)
        })
        .sum()
}

fn check_density_equivalence(rows: usize, cols: usize, seed: u64, points: usize) {
    let scheme = build_neighbourhood(LatticeGeometry::new(rows, cols), &TEN_NODE_TEMPLATE).unwrap();
    let mut r = rng(seed);
    let params = random_params(&mut r, &scheme, 0.6);
    let q = assemble_precision(&params, &scheme).unwrap();
    let (mu, factor) = assemble_mean(&params, &scheme, &q).unwrap();
    let log_phi: f64 = params.phi.iter().map(|p| p.ln()).sum();
    assert!((factor.log_det() + log_phi).abs() <= 1e-8 * log_phi.abs().max(1.0));
    for _ in 0..points {
        let x: Vec<f64> = normals(&mut r, scheme.n()).iter().zip(&mu).map(|(z, m)| m + 2.0 * z).collect();
        let a = gaussian_log_density(&x, &mu, &q, &factor).unwrap();
        let b = conditional_log_density(&params, &scheme, &x);
        assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn four_by_four_density_matches_conditionals() {
    check_density_equivalence(4, 4, 101, 100);
}

#[test]
fn mean_matches_recursion_and_dense_solve() {
    let scheme = build_neighbourhood(LatticeGeometry::square(3), &TEN_NODE_TEMPLATE).unwrap();
    let params = random_params(&mut rng(7), &scheme, 0.8);
    let q = assemble_precision(&params, &scheme).unwrap();
    let (mu, _) = assemble_mean(&params, &scheme, &q).unwrap();

    let mut rec = vec![0.0; scheme.n()];
    for k in 0..scheme.n() {
        let eta = &params.eta[k];
        rec[k] = eta[0] + scheme.neighbours(k).iter().zip(&eta[1..]).map(|(&l, e)| e * rec[l]).sum::<f64>();
    }
    assert!(max_abs_diff(&mu, &rec) <= 1e-10);

    // Right-hand side of the normal equations written out term by term.
    let mut rhs: Vec<f64> = (0..scheme.n()).map(|k| params.eta[k][0] / params.phi[k]).collect();
    for l in 0..scheme.n() {
        for (j, &k) in scheme.neighbours(l).iter().enumerate() {
            rhs[k] -= params.eta[l][0] * params.eta[l][j + 1] / params.phi[l];
        }
    }
    assert!(max_abs_diff(&mu, &solve(&q.to_dense(), &rhs)) <= 1e-10);
}

#[test]
fn ten_node_template_bounds_hold_on_ten_by_ten() {
    let scheme = build_neighbourhood(LatticeGeometry::square(10), &TEN_NODE_TEMPLATE).unwrap();
    assert_eq!(sparsity_bound(&scheme), (45, 24));
    let q = assemble_precision(&random_params(&mut rng(9), &scheme, 1.0), &scheme).unwrap();
    let mut max_row = 0;
    let mut max_band = 0;
    for i in 0..q.n() {
        let nnz = (0..q.n()).filter(|&j| q.get(i, j) != 0.0).count();
        max_row = max_row.max(nnz);
        if let Some(j) = (0..=i).find(|&j| q.get(i, j) != 0.0) {
            max_band = max_band.max(i - j);
        }
    }
    assert!(max_row <= 45, "{max_row} nonzeros in a row");
    assert!(max_band <= 24, "bandwidth {max_band}");
}

#[test]
fn interior_node_of_large_lattice_has_ten_neighbours() {
    let geom = LatticeGeometry::square(100);
    let scheme = build_neighbourhood(geom, &TEN_NODE_TEMPLATE).unwrap();
    assert_eq!(scheme.neighbours(geom.index(50, 50)).len(), 10);
    assert!(scheme.neighbours(0).is_empty());
}

fn support_oracle(scheme: &NeighbourhoodScheme, k: usize) -> BTreeSet<usize> {
    let mut s: BTreeSet<usize> = scheme.neighbours(k).iter().copied().collect();
    s.insert(k);
    for l in 0..scheme.n() {
        if scheme.neighbours(l).contains(&k) {
            s.insert(l);
            s.extend(scheme.neighbours(l).iter().copied());
        }
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn density_equivalence_on_small_lattices(rows in 1usize..=4, cols in 1usize..=3, seed in any::<u64>()) {
        check_density_equivalence(rows, cols, seed, 20);
    }

    #[test]
    fn nonzeros_lie_in_support(rows in 1usize..=5, cols in 1usize..=5, seed in any::<u64>()) {
        let scheme = build_neighbourhood(LatticeGeometry::new(rows, cols), &TEN_NODE_TEMPLATE).unwrap();
        let q = assemble_precision(&random_params(&mut rng(seed), &scheme, 1.0), &scheme).unwrap();
        for k in 0..scheme.n() {
            let oracle = support_oracle(&scheme, k);
            let declared: BTreeSet<usize> = scheme.support(k).into_iter().collect();
            prop_assert_eq!(&declared, &oracle);
            for l in 0..scheme.n() {
                if q.get(k, l) != 0.0 {
                    prop_assert!(oracle.contains(&l), "Q[{}, {}] outside the support", k, l);
                }
            }
        }
    }

    #[test]
    fn assembled_precision_admits_cholesky(rows in 1usize..=4, cols in 1usize..=3, seed in any::<u64>()) {
        let scheme = build_neighbourhood(LatticeGeometry::new(rows, cols), &TEN_NODE_TEMPLATE).unwrap();
        let q = assemble_precision(&random_params(&mut rng(seed), &scheme, 1.0), &scheme).unwrap();
        prop_assert!(cholesky_band(&q).is_ok());
    }
}
