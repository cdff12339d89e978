//! Block-local approximation of the optimal update.
//!
//! Each block `b` owns a rectangle `C_b` of the lattice. `D_b` widens it by
//! `u` nodes per side and `E_b` widens `D_b` by a further `v`, both clipped to
//! the lattice. `J_b` holds the observation rows that touch `E_b`. The
//! joint Gaussian of `(x, y)` is conditioned on everything outside
//! `(E_b, J_b)`, marginalised down to `(D_b, J_b)`, split into a prior for
//! `x^D` and a likelihood for `y^J`, and updated densely. Only the `C_b`
//! entries of the result are kept.

use std::ops::Range;

use faer::Mat;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::LatticeGeometry;
use crate::linalg::band::BandMatrix;
use crate::linalg::dense::{dense_cholesky, mat_vec};
use crate::linalg::sparse::SparseMatrix;
use crate::observation::ObservationModel;
use crate::sampler::Theta;
use crate::update::UpdateOperator;

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub c_rows: Range<usize>,
    pub c_cols: Range<usize>,
    /// Global node indices, ascending.
    pub c: Vec<usize>,
    pub d: Vec<usize>,
    pub e: Vec<usize>,
    /// Observation rows, ascending.
    pub j: Vec<usize>,
    /// Position of each `C_b` node within `D_b`.
    pub c_in_d: Vec<usize>,
    /// Position of each `D_b` node within `E_b`.
    pub d_in_e: Vec<usize>,
    /// Positions within `E_b` of the nodes in `E_b ∖ D_b`.
    pub a_in_e: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockPartition {
    geom: LatticeGeometry,
    u: usize,
    v: usize,
    blocks: Vec<Block>,
}

fn rect_nodes(geom: LatticeGeometry, rows: &Range<usize>, cols: &Range<usize>) -> Vec<usize> {
    rows.clone().flat_map(|i| cols.clone().map(move |j| geom.index(i, j))).collect()
}

fn widen(r: &Range<usize>, by: usize, limit: usize) -> Range<usize> {
    r.start.saturating_sub(by)..(r.end + by).min(limit)
}

/// Positions of `sub` within `sup`; both ascending and `sub ⊆ sup`.
fn positions(sub: &[usize], sup: &[usize]) -> Vec<usize> {
    sub.iter().map(|x| sup.binary_search(x).expect("subset")).collect()
}

/// Tiles the lattice with `block_rows x block_cols` rectangles, row-major,
/// truncating the last row and column of blocks.
pub fn build_partition(
    geom: LatticeGeometry,
    block_rows: usize,
    block_cols: usize,
    u: usize,
    v: usize,
    h: &SparseMatrix,
) -> Result<BlockPartition> {
    if block_rows == 0 || block_cols == 0 {
        return Err(Error::Config(format!("block size must be positive, got {block_rows}x{block_cols}")));
    }
    if h.ncols() != geom.n() {
        return Err(Error::DimensionMismatch(format!(
            "observation operator with {} columns on a lattice of {} nodes",
            h.ncols(),
            geom.n()
        )));
    }
    let mut blocks = Vec::new();
    let mut mask = vec![false; geom.n()];
    for r0 in (0..geom.rows()).step_by(block_rows) {
        for c0 in (0..geom.cols()).step_by(block_cols) {
            let c_rows = r0..(r0 + block_rows).min(geom.rows());
            let c_cols = c0..(c0 + block_cols).min(geom.cols());
            let d_rows = widen(&c_rows, u, geom.rows());
            let d_cols = widen(&c_cols, u, geom.cols());
            let e_rows = widen(&d_rows, v, geom.rows());
            let e_cols = widen(&d_cols, v, geom.cols());
            let c = rect_nodes(geom, &c_rows, &c_cols);
            let d = rect_nodes(geom, &d_rows, &d_cols);
            let e = rect_nodes(geom, &e_rows, &e_cols);
            for &k in &e {
                mask[k] = true;
            }
            let j = h.rows_touching(&mask);
            for &k in &e {
                mask[k] = false;
            }
            let a: Vec<usize> = e.iter().copied().filter(|k| d.binary_search(k).is_err()).collect();
            blocks.push(Block {
                c_in_d: positions(&c, &d),
                d_in_e: positions(&d, &e),
                a_in_e: positions(&a, &e),
                c_rows,
                c_cols,
                c,
                d,
                e,
                j,
            });
        }
    }
    Ok(BlockPartition { geom, u, v, blocks })
}

impl BlockPartition {
    pub fn geometry(&self) -> LatticeGeometry {
        self.geom
    }

    pub fn halo(&self) -> (usize, usize) {
        (self.u, self.v)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Block that owns node `k`.
    pub fn owner(&self, k: usize) -> usize {
        let (i, j) = self.geom.coords(k);
        self.blocks
            .iter()
            .position(|b| b.c_rows.contains(&i) && b.c_cols.contains(&j))
            .expect("blocks cover the lattice")
    }

    /// True if node `k` lies on an edge of its `C_b` that faces another block.
    pub fn is_internal_border(&self, k: usize) -> bool {
        let (i, j) = self.geom.coords(k);
        let b = &self.blocks[self.owner(k)];
        (i == b.c_rows.start && i > 0)
            || (i + 1 == b.c_rows.end && b.c_rows.end < self.geom.rows())
            || (j == b.c_cols.start && j > 0)
            || (j + 1 == b.c_cols.end && b.c_cols.end < self.geom.cols())
    }
}

/// `θ` together with the observation model, with `Q + HᵀRH` and `Hμ` cached.
#[derive(Debug, Clone)]
pub struct JointModel<'a> {
    theta: &'a Theta,
    obs: &'a ObservationModel,
    q_tilde: BandMatrix,
    h_mu: Vec<f64>,
}

impl<'a> JointModel<'a> {
    pub fn new(theta: &'a Theta, obs: &'a ObservationModel) -> Result<Self> {
        if obs.n_x() != theta.n() || theta.q.n() != theta.n() {
            return Err(Error::DimensionMismatch(format!(
                "mean of length {}, precision of size {}, H with {} columns",
                theta.n(),
                theta.q.n(),
                obs.n_x()
            )));
        }
        let q_tilde = theta.q.sum(&obs.information()?)?;
        let h_mu = obs.h().mul_vec(&theta.mu)?;
        Ok(Self { theta, obs, q_tilde, h_mu })
    }

    /// Joint precision of `(x, y)` times a vector `(dx, dy)`, restricted to
    /// the rows `(E, J)`.
    fn precision_times(&self, block: &Block, dx: &[f64], dy: &[f64]) -> Result<Vec<f64>> {
        let obs = self.obs;
        let qx = self.q_tilde.mul_vec(dx)?;
        let hrdy = obs.weighted_transpose(dy)?;
        let hdx = obs.h().mul_vec(dx)?;
        let mut out = Vec::with_capacity(block.e.len() + block.j.len());
        out.extend(block.e.iter().map(|&k| qx[k] - hrdy[k]));
        out.extend(block.j.iter().map(|&r| obs.r()[r] * (dy[r] - hdx[r])));
        Ok(out)
    }
}

/// Gaussian over `(x^S, y^J)` in precision form; the first `nx` coordinates are states.
#[derive(Debug, Clone)]
pub struct ConditionedJoint {
    pub mean: Vec<f64>,
    pub precision: Mat<f64>,
    pub nx: usize,
}

/// `g(x^E, y^J | θ)` with everything else held at its mean: `x^{−E} = μ^{−E}`
/// and `y^{−J} = (Hμ)^{−J}`.
///
/// The conditional precision is the `(E, J)` principal block of
/// `[[Q + HᵀRH, −HᵀR], [−RH, R]]`. The conditional mean shifts by
/// `−P_clip⁻¹ P_{clip,rest} (b − m)_rest`, which vanishes when the
/// conditioning values equal the means, leaving `(μ^E, (Hμ)^J)`.
pub fn conditioned_joint(model: &JointModel<'_>, block: &Block) -> Result<ConditionedJoint> {
    conditioned_joint_at(model, block, &model.theta.mu, &model.h_mu)
}

/// As [`conditioned_joint`] but conditioning on arbitrary values of
/// `x^{−E}` and `y^{−J}`. Entries of `x_cond` and `y_cond` inside `(E, J)`
/// are ignored.
pub fn conditioned_joint_at(
    model: &JointModel<'_>,
    block: &Block,
    x_cond: &[f64],
    y_cond: &[f64],
) -> Result<ConditionedJoint> {
    let n = model.theta.n();
    if x_cond.len() != n || y_cond.len() != model.obs.n_y() {
        return Err(Error::DimensionMismatch(format!(
            "conditioning values of lengths {} and {} for {} states and {} observations",
            x_cond.len(),
            y_cond.len(),
            n,
            model.obs.n_y()
        )));
    }
    let precision = clipped_precision(model, block);
    let mut mean: Vec<f64> = block.e.iter().map(|&k| model.theta.mu[k]).collect();
    mean.extend(block.j.iter().map(|&r| model.h_mu[r]));

    let mut dx: Vec<f64> = x_cond.iter().zip(&model.theta.mu).map(|(a, b)| a - b).collect();
    let mut dy: Vec<f64> = y_cond.iter().zip(&model.h_mu).map(|(a, b)| a - b).collect();
    for &k in &block.e {
        dx[k] = 0.0;
    }
    for &r in &block.j {
        dy[r] = 0.0;
    }
    if dx.iter().chain(&dy).any(|&v| v != 0.0) {
        let rhs = model.precision_times(block, &dx, &dy)?;
        let shift = dense_cholesky(&precision)?.solve_vec(&rhs)?;
        for (m, s) in mean.iter_mut().zip(&shift) {
            *m -= s;
        }
    }
    Ok(ConditionedJoint { mean, precision, nx: block.e.len() })
}

fn clipped_precision(model: &JointModel<'_>, block: &Block) -> Mat<f64> {
    let ne = block.e.len();
    let nj = block.j.len();
    let mut p = Mat::zeros(ne + nj, ne + nj);
    let e = &block.e;
    for a in 0..ne {
        for b in 0..=a {
            let v = model.q_tilde.get(e[a], e[b]);
            p[(a, b)] = v;
            p[(b, a)] = v;
        }
    }
    let r = model.obs.r();
    for (jb, &row) in block.j.iter().enumerate() {
        let col = ne + jb;
        p[(col, col)] = r[row];
        for (k, hv) in model.obs.h().row(row) {
            if let Ok(a) = e.binary_search(&k) {
                p[(a, col)] = -hv * r[row];
                p[(col, a)] = -hv * r[row];
            }
        }
    }
    p
}

fn select(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

fn select_mat(p: &Mat<f64>, rows: &[usize], cols: &[usize]) -> Mat<f64> {
    Mat::from_fn(rows.len(), cols.len(), |a, b| p[(rows[a], cols[b])])
}

/// Integrates `x^{E∖D}` out of `g`, giving the Schur-complement precision
/// over `(x^D, y^J)` and the corresponding mean entries.
pub fn marginalise_to_d(g: &ConditionedJoint, block: &Block) -> Result<ConditionedJoint> {
    if g.nx != block.e.len() {
        return Err(Error::DimensionMismatch(format!(
            "joint over {} states for a block with |E| = {}",
            g.nx,
            block.e.len()
        )));
    }
    let keep: Vec<usize> = block.d_in_e.iter().copied().chain(g.nx..g.mean.len()).collect();
    marginalise(g, &keep, &block.a_in_e, block.d.len())
}

/// Marginal over the coordinates `keep` after integrating out `drop`.
pub fn marginalise(g: &ConditionedJoint, keep: &[usize], drop: &[usize], nx: usize) -> Result<ConditionedJoint> {
    let mean = select(&g.mean, keep);
    let p_kk = select_mat(&g.precision, keep, keep);
    if drop.is_empty() {
        return Ok(ConditionedJoint { mean, precision: p_kk, nx });
    }
    let p_aa = select_mat(&g.precision, drop, drop);
    let p_ak = select_mat(&g.precision, drop, keep);
    let w = dense_cholesky(&p_aa)?.forward_mat(&p_ak);
    let wtw = w.transpose() * &w;
    let n = keep.len();
    let precision = Mat::from_fn(n, n, |i, j| p_kk[(i, j)] - 0.5 * (wtw[(i, j)] + wtw[(j, i)]));
    Ok(ConditionedJoint { mean, precision, nx })
}

/// Block prior `N(μ̃, Q̃)` for `x^D` and likelihood `y^J | x^D ~ N(ã + H̃ x^D, R̃)`.
#[derive(Debug, Clone)]
pub struct SplitProblem {
    pub mu: Vec<f64>,
    pub q: Mat<f64>,
    pub a: Vec<f64>,
    pub h: Mat<f64>,
    pub r: Mat<f64>,
}

/// Splits a joint over `(x^D, y^J)` into marginal and conditional parts:
/// `Q̃ = P_DD − P_DJ P_JJ⁻¹ P_JD`, `H̃ = −P_JJ⁻¹ P_JD`, `R̃ = P_JJ`,
/// `ã = m_J − H̃ m_D`.
pub fn split_prior_likelihood(g: &ConditionedJoint) -> Result<SplitProblem> {
    let nd = g.nx;
    let nj = g.mean.len() - nd;
    let d_idx: Vec<usize> = (0..nd).collect();
    let j_idx: Vec<usize> = (nd..nd + nj).collect();
    let m_d = select(&g.mean, &d_idx);
    let m_j = select(&g.mean, &j_idx);
    let p_dd = select_mat(&g.precision, &d_idx, &d_idx);
    if nj == 0 {
        return Ok(SplitProblem { mu: m_d, q: p_dd, a: Vec::new(), h: Mat::zeros(0, nd), r: Mat::zeros(0, 0) });
    }
    let p_jj = select_mat(&g.precision, &j_idx, &j_idx);
    let p_jd = select_mat(&g.precision, &j_idx, &d_idx);
    let chol = dense_cholesky(&p_jj)?;
    let sol = chol.solve_mat(&p_jd)?;
    let correction = p_jd.transpose() * &sol;
    let q = Mat::from_fn(nd, nd, |i, j| p_dd[(i, j)] - 0.5 * (correction[(i, j)] + correction[(j, i)]));
    let h = Mat::from_fn(nj, nd, |i, j| -sol[(i, j)]);
    let hm = mat_vec(&h, &m_d);
    let a = m_j.iter().zip(&hm).map(|(x, y)| x - y).collect();
    Ok(SplitProblem { mu: m_d, q, a, h, r: p_jj })
}

/// Block-local problem for block `b`, ready for the dense update.
pub fn block_problem(model: &JointModel<'_>, block: &Block) -> Result<SplitProblem> {
    let g = conditioned_joint(model, block)?;
    let gd = marginalise_to_d(&g, block)?;
    split_prior_likelihood(&gd)
}

fn update_block(x: &[f64], y: &[f64], model: &JointModel<'_>, block: &Block) -> Result<Vec<f64>> {
    let sp = block_problem(model, block)?;
    let x_d = select(x, &block.d);
    let y_j: Vec<f64> = block.j.iter().zip(&sp.a).map(|(&r, a)| y[r] - a).collect();
    let op = UpdateOperator::new_dense(&sp.mu, &sp.q, &y_j, &sp.h, &sp.r)?;
    let xt = op.apply(&x_d)?;
    Ok(select(&xt, &block.c_in_d))
}

/// Block-update approximation of the optimal update for one member.
pub fn block_update_member(
    x: &[f64],
    theta: &Theta,
    y: &[f64],
    partition: &BlockPartition,
    obs: &ObservationModel,
) -> Result<Vec<f64>> {
    let n = partition.geometry().n();
    if x.len() != n || theta.n() != n || y.len() != obs.n_y() {
        return Err(Error::DimensionMismatch(format!(
            "member of length {}, θ of size {}, {} observations, lattice of {} nodes",
            x.len(),
            theta.n(),
            y.len(),
            n
        )));
    }
    let model = JointModel::new(theta, obs)?;
    let parts: Vec<Vec<f64>> = partition
        .blocks()
        .par_iter()
        .enumerate()
        .map(|(b, block)| update_block(x, y, &model, block).map_err(|e| e.in_block(b)))
        .collect::<Result<_>>()?;
    let mut out = vec![f64::NAN; n];
    for (block, vals) in partition.blocks().iter().zip(parts) {
        for (&k, v) in block.c.iter().zip(vals) {
            out[k] = v;
        }
    }
    Ok(out)
}
