//! Lattice simulation studies: reference states, observations, the ensemble
//! filter loop and the exact Kalman filter for the linear dynamics.

use std::fmt;
use std::str::FromStr;

use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::block::{block_update_member, build_partition, BlockPartition};
use crate::error::{Error, Result};
use crate::lattice::LatticeGeometry;
use crate::linalg::dense::{dense_cholesky, mat_vec, symmetrize};
use crate::linalg::sparse::SparseMatrix;
use crate::observation::ObservationModel;
use crate::pomm::{build_neighbourhood, HyperParams, NeighbourhoodScheme, Offset, TEN_NODE_TEMPLATE};
use crate::rng::{stream, Purpose};
use crate::sampler::{gibbs_sample_theta, ConditioningSet, DEFAULT_GIBBS_ITERS};
use crate::update::optimal_update_member;

/// Radius of the moving-average window used for the initial field.
pub const INIT_RADIUS: i64 = 3;

/// Default limit on `n_x` for the dense Kalman reference.
pub const DEFAULT_DENSE_CAP: usize = 2500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardKind {
    Linear,
    Arctan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    Optimal,
    Block,
}

impl FromStr for ForwardKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "arctan" => Ok(Self::Arctan),
            other => Err(Error::Config(format!("unknown forward model '{other}'"))),
        }
    }
}

impl fmt::Display for ForwardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Arctan => "arctan",
        })
    }
}

impl FromStr for UpdateKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimal" => Ok(Self::Optimal),
            "block" => Ok(Self::Block),
            other => Err(Error::Config(format!("unknown update kind '{other}'"))),
        }
    }
}

impl fmt::Display for UpdateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Optimal => "optimal",
            Self::Block => "block",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Lattice side.
    pub s: usize,
    /// Number of time steps.
    pub steps: usize,
    /// Ensemble size.
    pub members: usize,
    pub forward: ForwardKind,
    pub update: UpdateKind,
    pub block_rows: usize,
    pub block_cols: usize,
    pub u: usize,
    pub v: usize,
    pub gibbs_iters: usize,
    /// Seed for the initial ensemble and the Gibbs sampler.
    pub seed: u64,
    /// Seed for the reference states and observation noise.
    pub reference_seed: u64,
    pub obs_variance: f64,
    pub init_variance: f64,
    pub template: Vec<Offset>,
    pub dense_cap: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            s: 30,
            steps: 5,
            members: 25,
            forward: ForwardKind::Linear,
            update: UpdateKind::Optimal,
            block_rows: 10,
            block_cols: 10,
            u: 3,
            v: 3,
            gibbs_iters: DEFAULT_GIBBS_ITERS,
            seed: 1,
            reference_seed: 1,
            obs_variance: 20.0,
            init_variance: 20.0,
            template: TEN_NODE_TEMPLATE.to_vec(),
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.s < 2 {
            return fail(format!("lattice side must be at least 2, got {}", self.s));
        }
        if self.steps < 1 {
            return fail("at least one time step is needed".into());
        }
        if self.members < 2 {
            return fail(format!("ensemble needs at least 2 members, got {}", self.members));
        }
        if self.block_rows == 0 || self.block_cols == 0 {
            return fail(format!("block size must be positive, got {}x{}", self.block_rows, self.block_cols));
        }
        if self.gibbs_iters == 0 {
            return fail("the Gibbs sampler needs at least one iteration".into());
        }
        if !(self.obs_variance > 0.0) || !(self.init_variance > 0.0) {
            return fail("variances must be positive".into());
        }
        for &(dr, dc) in &self.template {
            if dr > 0 || (dr == 0 && dc >= 0) {
                return fail(format!("template offset ({dr}, {dc}) does not point to an earlier node"));
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> LatticeGeometry {
        LatticeGeometry::square(self.s)
    }

    pub fn observation_model(&self) -> ObservationModel {
        let geom = self.geometry();
        ObservationModel::new(observation_operator(geom), vec![1.0 / self.obs_variance; geom.n()])
            .expect("box-average operator is well formed")
    }

    pub fn scheme(&self) -> Result<NeighbourhoodScheme> {
        build_neighbourhood(self.geometry(), &self.template)
    }

    pub fn partition(&self, obs: &ObservationModel) -> Result<BlockPartition> {
        build_partition(self.geometry(), self.block_rows, self.block_cols, self.u, self.v, obs.h())
    }
}

/// Offsets `(dr, dc)` with `dr² + dc² ≤ r²`, row-major.
pub fn disc_offsets(r: i64) -> Vec<Offset> {
    let mut out = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if dr * dr + dc * dc <= r * r {
                out.push((dr, dc));
            }
        }
    }
    out
}

/// Moving average of white noise over a disc of radius 3, computed on the
/// lattice extended by 3 nodes per side so every node sees a full disc.
/// Each entry has variance `variance`.
pub fn generate_initial_field<R: Rng + ?Sized>(s: usize, variance: f64, rng: &mut R) -> Vec<f64> {
    let m = INIT_RADIUS as usize;
    let w = s + 2 * m;
    let z: Vec<f64> = (0..w * w).map(|_| rng.sample(StandardNormal)).collect();
    initial_field_from_noise(s, variance, &z)
}

/// The initial field for a given extended-lattice noise vector, row-major of side `s + 6`.
pub fn initial_field_from_noise(s: usize, variance: f64, z: &[f64]) -> Vec<f64> {
    let m = INIT_RADIUS as usize;
    let w = s + 2 * m;
    assert_eq!(z.len(), w * w, "noise field has the wrong size");
    let disc = disc_offsets(INIT_RADIUS);
    let scale = (variance / disc.len() as f64).sqrt();
    let mut x = vec![0.0; s * s];
    for i in 0..s {
        for j in 0..s {
            let (ci, cj) = ((i + m) as i64, (j + m) as i64);
            let sum: f64 = disc.iter().map(|&(dr, dc)| z[((ci + dr) as usize) * w + (cj + dc) as usize]).sum();
            x[i * s + j] = scale * sum;
        }
    }
    x
}

/// Exact covariance of the initial field: `variance/|Γ| · |Γ(a) ∩ Γ(b)|`.
pub fn initial_covariance(s: usize, variance: f64) -> Mat<f64> {
    let disc = disc_offsets(INIT_RADIUS);
    let c = variance / disc.len() as f64;
    let r2 = INIT_RADIUS * INIT_RADIUS;
    let overlap = |di: i64, dj: i64| {
        disc.iter().filter(|&&(dr, dc)| (dr + di).pow(2) + (dc + dj).pow(2) <= r2).count() as f64
    };
    let n = s * s;
    Mat::from_fn(n, n, |a, b| {
        let (ai, aj) = ((a / s) as i64, (a % s) as i64);
        let (bi, bj) = ((b / s) as i64, (b % s) as i64);
        c * overlap(ai - bi, aj - bj)
    })
}

/// Inner and outer annulus radii at step `t` (1-based) out of `steps`.
pub fn annulus_radii(s: usize, t: usize, steps: usize) -> (f64, f64) {
    assert!(steps >= 2 && (2..=steps).contains(&t), "annulus defined for 2 <= t <= T");
    let half = s as f64 / 2.0 - 1.0;
    let denom = (steps - 1) as f64;
    let r1 = (half * (t as f64 - 2.5) / denom).floor().max(0.0);
    let r2 = (half * (t as f64 - 1.0) / denom).floor();
    (r1, r2)
}

/// Whether a node at distance `d` from the centre is smoothed. Both radii are inclusive.
#[inline]
pub fn in_annulus(d: f64, r1: f64, r2: f64) -> bool {
    r1 <= d && d <= r2
}

/// The linear forward map at step `t` as a sparse matrix: nodes inside the
/// annulus take the average of their 5-node cross (clipped), others are copied.
pub fn linear_forward_matrix(s: usize, t: usize, steps: usize) -> SparseMatrix {
    let geom = LatticeGeometry::square(s);
    let (r1, r2) = annulus_radii(s, t, steps);
    let centre = (s as f64 - 1.0) / 2.0;
    let cross = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)];
    let mut triplets = Vec::new();
    for k in 0..geom.n() {
        let (i, j) = geom.coords(k);
        let d = ((i as f64 - centre).powi(2) + (j as f64 - centre).powi(2)).sqrt();
        if in_annulus(d, r1, r2) {
            let nb: Vec<usize> = cross.iter().filter_map(|&(dr, dc)| geom.offset(i, j, dr, dc)).collect();
            let w = 1.0 / nb.len() as f64;
            triplets.extend(nb.into_iter().map(|l| (k, l, w)));
        } else {
            triplets.push((k, k, 1.0));
        }
    }
    SparseMatrix::from_triplets(geom.n(), geom.n(), triplets).expect("indices on the lattice")
}

pub fn linear_forward(x_prev: &[f64], t: usize, steps: usize, s: usize) -> Vec<f64> {
    linear_forward_matrix(s, t, steps).mul_vec(x_prev).expect("state on the lattice")
}

/// `x + 0.5·atan(x/2)`, elementwise.
pub fn nonlinear_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v + 0.5 * (v / 2.0).atan()).collect()
}

/// 3x3 box average clipped to the lattice; one observation per node.
pub fn observation_operator(geom: LatticeGeometry) -> SparseMatrix {
    // dr² + dc² ≤ 2
    let offsets: Vec<Offset> = (-1..=1).flat_map(|dr| (-1..=1).map(move |dc| (dr, dc))).collect();
    let mut triplets = Vec::new();
    for k in 0..geom.n() {
        let (i, j) = geom.coords(k);
        let nb: Vec<usize> = offsets.iter().filter_map(|&(dr, dc)| geom.offset(i, j, dr, dc)).collect();
        let w = 1.0 / nb.len() as f64;
        triplets.extend(nb.into_iter().map(|l| (k, l, w)));
    }
    SparseMatrix::from_triplets(geom.n(), geom.n(), triplets).expect("indices on the lattice")
}

/// `H x + ε` with `ε ~ N(0, variance·I)`.
pub fn observe<R: Rng + ?Sized>(x: &[f64], h: &SparseMatrix, variance: f64, rng: &mut R) -> Result<Vec<f64>> {
    let mut y = h.mul_vec(x)?;
    let sd = variance.sqrt();
    for v in y.iter_mut() {
        *v += sd * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(y)
}

fn forecast(config: &ExperimentConfig, x: &[f64], t: usize) -> Vec<f64> {
    match config.forward {
        ForwardKind::Linear => linear_forward(x, t, config.steps, config.s),
        ForwardKind::Arctan => nonlinear_forward(x),
    }
}

/// True states and observations for `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub states: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
}

pub fn generate_reference(config: &ExperimentConfig) -> Result<Reference> {
    config.validate()?;
    let h = observation_operator(config.geometry());
    let mut states = Vec::with_capacity(config.steps);
    let mut observations = Vec::with_capacity(config.steps);
    let mut rng = stream(config.reference_seed, 0, 0, Purpose::ReferenceField);
    let mut x = generate_initial_field(config.s, config.init_variance, &mut rng);
    for t in 1..=config.steps {
        if t > 1 {
            x = forecast(config, &x, t);
        }
        let mut noise = stream(config.reference_seed, t, 0, Purpose::ObservationNoise);
        observations.push(observe(&x, &h, config.obs_variance, &mut noise)?);
        states.push(x.clone());
    }
    Ok(Reference { states, observations })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub geom: LatticeGeometry,
    /// 1-based time index.
    pub t: usize,
    pub members: Vec<Vec<f64>>,
}

impl Ensemble {
    pub fn new(geom: LatticeGeometry, t: usize, members: Vec<Vec<f64>>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::DimensionMismatch(format!("ensemble needs at least 2 members, got {}", members.len())));
        }
        if members.iter().any(|m| m.len() != geom.n()) {
            return Err(Error::GeometryMismatch(format!("member length differs from {} nodes", geom.n())));
        }
        Ok(Self { geom, t, members })
    }

    /// One state field stored in ensemble form, as used for references and observations.
    pub fn single(geom: LatticeGeometry, t: usize, field: Vec<f64>) -> Result<Self> {
        if field.len() != geom.n() {
            return Err(Error::GeometryMismatch(format!("field length {} differs from {} nodes", field.len(), geom.n())));
        }
        Ok(Self { geom, t, members: vec![field] })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.geom.n()];
        for x in &self.members {
            for (a, b) in m.iter_mut().zip(x) {
                *a += b;
            }
        }
        let c = 1.0 / self.members.len() as f64;
        m.iter_mut().for_each(|a| *a *= c);
        m
    }

    /// Member values at node `k`.
    pub fn node_values(&self, k: usize) -> Vec<f64> {
        self.members.iter().map(|m| m[k]).collect()
    }
}

/// Prior and posterior ensembles for every step.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    pub prior: Vec<Ensemble>,
    pub posterior: Vec<Ensemble>,
}

/// `M` independent initial fields drawn from member-keyed streams.
pub fn initial_ensemble(config: &ExperimentConfig) -> Result<Ensemble> {
    let members = (0..config.members)
        .map(|m| generate_initial_field(config.s, config.init_variance, &mut stream(config.seed, 0, m, Purpose::InitialEnsemble)))
        .collect();
    Ensemble::new(config.geometry(), 1, members)
}

/// Update of a whole prior ensemble, each member with its own θ.
pub fn update_ensemble(
    config: &ExperimentConfig,
    prior: &Ensemble,
    y: &[f64],
    obs: &ObservationModel,
    scheme: &NeighbourhoodScheme,
    hyper: &HyperParams,
    partition: Option<&BlockPartition>,
) -> Result<Ensemble> {
    let t = prior.t;
    let members: Vec<Vec<f64>> = (0..prior.size())
        .into_par_iter()
        .map(|m| {
            let others: Vec<&[f64]> =
                prior.members.iter().enumerate().filter(|(i, _)| *i != m).map(|(_, x)| x.as_slice()).collect();
            let cond = ConditioningSet { members: &others, y, obs };
            let mut rng = stream(config.seed, t, m, Purpose::Gibbs);
            let theta = gibbs_sample_theta(&cond, hyper, scheme, config.gibbs_iters, &mut rng)?;
            let x = &prior.members[m];
            match (config.update, partition) {
                (UpdateKind::Block, Some(p)) => block_update_member(x, &theta, y, p, obs),
                (UpdateKind::Block, None) => Err(Error::Config("block update without a partition".into())),
                (UpdateKind::Optimal, _) => optimal_update_member(x, &theta, y, obs),
            }
            .map_err(|e| e.in_member(t, m))
        })
        .collect::<Result<_>>()?;
    Ensemble::new(prior.geom, t, members)
}

/// Runs the filter over all observations with the configured observation model.
pub fn run_filter(config: &ExperimentConfig, observations: &[Vec<f64>]) -> Result<FilterRun> {
    run_filter_with(config, observations, &config.observation_model())
}

/// Runs the filter with an explicit observation model.
pub fn run_filter_with(config: &ExperimentConfig, observations: &[Vec<f64>], obs: &ObservationModel) -> Result<FilterRun> {
    config.validate()?;
    if observations.len() < config.steps {
        return Err(Error::Config(format!(
            "{} observation vectors for {} steps",
            observations.len(),
            config.steps
        )));
    }
    let geom = config.geometry();
    if obs.n_x() != geom.n() || observations.iter().any(|y| y.len() != obs.n_y()) {
        return Err(Error::GeometryMismatch(format!("observations do not match a {0}x{0} lattice", config.s)));
    }
    let scheme = config.scheme()?;
    let hyper = HyperParams::vague(&scheme);
    let partition = match config.update {
        UpdateKind::Block => Some(config.partition(obs)?),
        UpdateKind::Optimal => None,
    };
    let mut prior = initial_ensemble(config)?;
    let mut run = FilterRun { prior: Vec::new(), posterior: Vec::new() };
    for t in 1..=config.steps {
        let post = update_ensemble(config, &prior, &observations[t - 1], obs, &scheme, &hyper, partition.as_ref())?;
        run.prior.push(prior);
        if t < config.steps {
            let members = post.members.par_iter().map(|x| forecast(config, x, t + 1)).collect();
            prior = Ensemble::new(geom, t + 1, members)?;
        } else {
            prior = post.clone();
        }
        run.posterior.push(post);
    }
    Ok(run)
}

/// Gaussian moments `(mean, covariance)`.
#[derive(Debug, Clone)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub cov: Mat<f64>,
}

#[derive(Debug, Clone)]
pub struct KalmanRun {
    pub prior: Vec<Moments>,
    pub posterior: Vec<Moments>,
}

/// One covariance-form Kalman update with observation covariance `obs_variance·I`.
pub fn kalman_update(prior: &Moments, y: &[f64], h: &Mat<f64>, obs_variance: f64) -> Result<Moments> {
    let n = prior.mean.len();
    let ph = &prior.cov * h.transpose();
    let hph = h * &ph;
    let ny = h.nrows();
    let s = Mat::from_fn(ny, ny, |i, j| 0.5 * (hph[(i, j)] + hph[(j, i)]) + if i == j { obs_variance } else { 0.0 });
    let chol = dense_cholesky(&s)?;
    let hm = mat_vec(h, &prior.mean);
    let innov: Vec<f64> = y.iter().zip(&hm).map(|(a, b)| a - b).collect();
    let w = chol.solve_vec(&innov)?;
    let shift = mat_vec(&ph, &w);
    let mean = (0..n).map(|i| prior.mean[i] + shift[i]).collect();
    // P − P Hᵀ S⁻¹ H P
    let sol = chol.solve_mat(&ph.transpose().to_owned())?;
    let cov = symmetrize(&(&prior.cov - &ph * &sol));
    Ok(Moments { mean, cov })
}

/// Exact filter for the linear dynamics, starting from the known moments of the initial field.
pub fn kalman_reference(config: &ExperimentConfig, observations: &[Vec<f64>]) -> Result<KalmanRun> {
    kalman_reference_with(config, observations, &observation_operator(config.geometry()).to_dense())
}

pub fn kalman_reference_with(config: &ExperimentConfig, observations: &[Vec<f64>], h: &Mat<f64>) -> Result<KalmanRun> {
    config.validate()?;
    if config.forward != ForwardKind::Linear {
        return Err(Error::Config("the Kalman reference needs the linear forward model".into()));
    }
    let n = config.geometry().n();
    if n > config.dense_cap {
        return Err(Error::SizeLimit { n, limit: config.dense_cap });
    }
    if observations.len() < config.steps {
        return Err(Error::Config(format!("{} observation vectors for {} steps", observations.len(), config.steps)));
    }
    let mut state = Moments { mean: vec![0.0; n], cov: initial_covariance(config.s, config.init_variance) };
    let mut run = KalmanRun { prior: Vec::new(), posterior: Vec::new() };
    for t in 1..=config.steps {
        let post = kalman_update(&state, &observations[t - 1], h, config.obs_variance)?;
        run.prior.push(state);
        state = if t < config.steps {
            let a = linear_forward_matrix(config.s, t + 1, config.steps).to_dense();
            let mean = mat_vec(&a, &post.mean);
            let cov = symmetrize(&(&a * &post.cov * a.transpose()));
            Moments { mean, cov }
        } else {
            post.clone()
        };
        run.posterior.push(post);
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disc_sizes() {
        assert_eq!(disc_offsets(3).len(), 29);
        assert_eq!(disc_offsets(1).len(), 5);
    }

    #[test]
    fn zero_noise_gives_zero_field() {
        assert_eq!(initial_field_from_noise(4, 20.0, &vec![0.0; 100]), vec![0.0; 16]);
    }

    #[test]
    fn first_annulus_has_zero_inner_radius() {
        assert_eq!(annulus_radii(10, 2, 5).0, 0.0);
        let (r1, r2) = annulus_radii(100, 5, 5);
        assert_eq!((r1, r2), (30.0, 49.0));
    }

    #[test]
    fn arctan_values() {
        let y = nonlinear_forward(&[0.0, 2.0, -2.0]);
        assert_eq!(y[0], 0.0);
        assert!((y[1] - 2.392_699_081_698_724).abs() < 1e-12);
        assert_eq!(y[2], -y[1]);
    }

    #[test]
    fn box_average_weights() {
        let g = LatticeGeometry::square(5);
        let h = observation_operator(g);
        assert_eq!(h.row(g.index(2, 2)).count(), 9);
        assert!(h.row(g.index(2, 2)).all(|(_, w)| (w - 1.0 / 9.0).abs() < 1e-15));
        assert_eq!(h.row(0).count(), 4);
        assert_eq!(h.row(g.index(0, 2)).count(), 6);
        let mut rng = stream(0, 0, 0, Purpose::Test);
        let y = observe(&[0.0; 25], &h, 0.0, &mut rng).unwrap();
        assert_eq!(y, vec![0.0; 25]);
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::default();
        assert!(c.validate().is_ok());
        c.block_rows = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = ExperimentConfig { members: 1, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
