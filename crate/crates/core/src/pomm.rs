//! Gaussian partially ordered Markov model prior on a lattice.
//!
//! Node `k` is Gaussian given its sequential neighbours `Λ_k`, with mean
//! `η_k[0] + Σ_j η_k[j+1] x[Λ_k[j]]` and variance `φ_k`. The joint is
//! `N(μ, Q)` with `Q = (I − A)ᵀ Φ⁻¹ (I − A)`, where row `k` of `A` carries the
//! regression coefficients of node `k`.

use faer::Mat;

use crate::error::{Error, Result};
use crate::lattice::LatticeGeometry;
use crate::linalg::band::{cholesky_band, solve_band, BandCholesky, BandMatrix};
use crate::linalg::dense::{dense_cholesky, mat_vec};

/// Signed `(row, column)` offset to a sequential neighbour.
pub type Offset = (i64, i64);

/// The ten-node sequential neighbourhood: two to the left on the same row,
/// five on the row above and three on the row above that.
pub const TEN_NODE_TEMPLATE: [Offset; 10] = [
    (0, -2),
    (0, -1),
    (-1, -2),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (-1, 2),
    (-2, -1),
    (-2, 0),
    (-2, 1),
];

/// Parses a template with one `dr dc` pair per line. Blank lines and lines
/// starting with `#` are ignored.
pub fn parse_template(text: &str) -> Result<Vec<Offset>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| {
            s.parse::<i64>()
                .map_err(|_| Error::InvalidTemplate(format!("line {}: '{}' is not an integer", lineno + 1, s)))
        };
        if parts.len() != 2 {
            return Err(Error::InvalidTemplate(format!(
                "line {}: expected two integers, found '{}'",
                lineno + 1,
                line
            )));
        }
        out.push((parse(parts[0])?, parse(parts[1])?));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighbourhoodScheme {
    geom: LatticeGeometry,
    template: Vec<Offset>,
    lambda: Vec<Vec<usize>>,
}

/// Sequential neighbourhoods from a translation-invariant template. Offsets
/// falling outside the lattice are dropped, and each `Λ_k` is sorted ascending.
pub fn build_neighbourhood(geom: LatticeGeometry, template: &[Offset]) -> Result<NeighbourhoodScheme> {
    for &(dr, dc) in template {
        if dr > 0 || (dr == 0 && dc >= 0) {
            return Err(Error::InvalidTemplate(format!(
                "offset ({dr}, {dc}) does not point to an earlier node"
            )));
        }
    }
    let mut sorted = template.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidTemplate("duplicate offset".into()));
    }
    let lambda = (0..geom.n())
        .map(|k| {
            let (i, j) = geom.coords(k);
            let mut l: Vec<usize> = template.iter().filter_map(|&(dr, dc)| geom.offset(i, j, dr, dc)).collect();
            l.sort_unstable();
            l
        })
        .collect();
    Ok(NeighbourhoodScheme { geom, template: template.to_vec(), lambda })
}

impl NeighbourhoodScheme {
    /// Scheme with explicit neighbour lists on a `1 x n` lattice, for chains
    /// and hand-built examples.
    pub fn from_lists(lambda: Vec<Vec<usize>>) -> Result<Self> {
        for (k, l) in lambda.iter().enumerate() {
            if l.iter().any(|&j| j >= k) {
                return Err(Error::InvalidTemplate(format!("node {k} has a neighbour that is not earlier")));
            }
            if l.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidTemplate(format!("neighbours of node {k} are not strictly ascending")));
            }
        }
        let geom = LatticeGeometry::new(1, lambda.len().max(1));
        Ok(Self { geom, template: Vec::new(), lambda })
    }

    pub fn geometry(&self) -> LatticeGeometry {
        self.geom
    }

    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    pub fn template(&self) -> &[Offset] {
        &self.template
    }

    /// `Λ_k`, ascending.
    pub fn neighbours(&self, k: usize) -> &[usize] {
        &self.lambda[k]
    }

    /// Vertical and horizontal template extents `(u, v)`: `u` is the largest
    /// row offset and `v` the column span of the template together with the
    /// node itself.
    pub fn extents(&self) -> (usize, usize) {
        let u = self.template.iter().map(|o| o.0.unsigned_abs() as usize).max().unwrap_or(0);
        let lo = self.template.iter().map(|o| o.1).min().unwrap_or(0).min(0);
        let hi = self.template.iter().map(|o| o.1).max().unwrap_or(0).max(0);
        (u, (hi - lo) as usize)
    }

    /// Largest `k − ℓ` over `ℓ ∈ Λ_k`; the bandwidth of the assembled `Q`.
    pub fn bandwidth(&self) -> usize {
        self.lambda
            .iter()
            .enumerate()
            .filter_map(|(k, l)| l.first().map(|&f| k - f))
            .max()
            .unwrap_or(0)
    }

    /// `∂k`: union of `Λ_t ∪ {t}` over all `t` with `k ∈ Λ_t ∪ {t}`.
    pub fn support(&self, k: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for t in 0..self.n() {
            let l = &self.lambda[t];
            if t == k || l.binary_search(&k).is_ok() {
                out.push(t);
                out.extend_from_slice(l);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Per-row nonzero bound and bandwidth bound for `Q` under a template with
/// extents `(u, v)` on a lattice with `s` columns.
pub fn sparsity_bound(scheme: &NeighbourhoodScheme) -> (usize, usize) {
    let (u, v) = scheme.extents();
    ((2 * u + 1) * (2 * v + 1), scheme.geometry().cols() * u + v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PommParams {
    pub phi: Vec<f64>,
    /// Intercept first, then one coefficient per neighbour in `Λ_k` order.
    pub eta: Vec<Vec<f64>>,
}

impl PommParams {
    pub fn validate(&self, scheme: &NeighbourhoodScheme) -> Result<()> {
        if self.phi.len() != scheme.n() || self.eta.len() != scheme.n() {
            return Err(Error::DimensionMismatch(format!(
                "{} variances and {} coefficient vectors for {} nodes",
                self.phi.len(),
                self.eta.len(),
                scheme.n()
            )));
        }
        for k in 0..scheme.n() {
            if !(self.phi[k] > 0.0) || !self.phi[k].is_finite() {
                return Err(Error::DimensionMismatch(format!("variance at node {k} is not positive")));
            }
            if self.eta[k].len() != scheme.neighbours(k).len() + 1 {
                return Err(Error::DimensionMismatch(format!(
                    "node {k} has {} coefficients, expected {}",
                    self.eta[k].len(),
                    scheme.neighbours(k).len() + 1
                )));
            }
        }
        Ok(())
    }

    /// `Σ_k log N(x_k; η_k·[1, x_Λk], φ_k)`.
    pub fn log_density(&self, scheme: &NeighbourhoodScheme, x: &[f64]) -> Result<f64> {
        self.validate(scheme)?;
        if x.len() != scheme.n() {
            return Err(Error::DimensionMismatch(format!("state of length {} for {} nodes", x.len(), scheme.n())));
        }
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let mut total = 0.0;
        for k in 0..scheme.n() {
            let eta = &self.eta[k];
            let mean = eta[0] + scheme.neighbours(k).iter().zip(&eta[1..]).map(|(&l, e)| e * x[l]).sum::<f64>();
            let r = x[k] - mean;
            total += -0.5 * (ln2pi + self.phi[k].ln() + r * r / self.phi[k]);
        }
        Ok(total)
    }
}

/// `Q = Σ_k (1/φ_k) w_k w_kᵀ` with `w_k = e_k − Σ_j η_k[j+1] e_{Λ_k[j]}`.
pub fn assemble_precision(params: &PommParams, scheme: &NeighbourhoodScheme) -> Result<BandMatrix> {
    params.validate(scheme)?;
    let mut q = BandMatrix::zeros(scheme.n(), scheme.bandwidth());
    let mut idx = Vec::new();
    let mut w = Vec::new();
    for k in 0..scheme.n() {
        idx.clear();
        w.clear();
        idx.push(k);
        w.push(1.0);
        for (&l, &e) in scheme.neighbours(k).iter().zip(&params.eta[k][1..]) {
            idx.push(l);
            w.push(-e);
        }
        let inv_phi = 1.0 / params.phi[k];
        for a in 0..idx.len() {
            for b in 0..=a {
                q.add(idx[a], idx[b], inv_phi * w[a] * w[b]);
            }
        }
    }
    Ok(q)
}

/// Solves `Q μ = b` with `b = Σ_k (η_k[0]/φ_k) w_k`, returning `μ` and the factor of `Q`.
pub fn assemble_mean(params: &PommParams, scheme: &NeighbourhoodScheme, q: &BandMatrix) -> Result<(Vec<f64>, BandCholesky)> {
    params.validate(scheme)?;
    if q.n() != scheme.n() {
        return Err(Error::DimensionMismatch(format!("precision of size {} for {} nodes", q.n(), scheme.n())));
    }
    let mut b = vec![0.0; scheme.n()];
    for k in 0..scheme.n() {
        let c = params.eta[k][0] / params.phi[k];
        b[k] += c;
        for (&l, &e) in scheme.neighbours(k).iter().zip(&params.eta[k][1..]) {
            b[l] -= c * e;
        }
    }
    let factor = cholesky_band(q)?;
    let mu = solve_band(&factor, &b)?;
    Ok((mu, factor))
}

/// Conjugate prior for one node: `φ ~ InvGam(α, β)` with density
/// `∝ φ^{−(α+1)} exp(−rate/φ)`, `rate = 1/β`, and `η | φ ~ N(ζ, cov φΣ)`.
#[derive(Debug, Clone)]
pub struct NodeHyper {
    alpha: f64,
    rate: f64,
    zeta: Vec<f64>,
    sigma: Mat<f64>,
    sigma_inv: Mat<f64>,
    sigma_inv_zeta: Vec<f64>,
    zeta_quad: f64,
}

impl NodeHyper {
    pub fn new(alpha: f64, rate: f64, zeta: Vec<f64>, sigma: Mat<f64>) -> Result<Self> {
        if !(alpha >= 0.0) || !(rate >= 0.0) {
            return Err(Error::Config(format!("hyperparameters need alpha >= 0 and rate >= 0, got {alpha}, {rate}")));
        }
        if sigma.nrows() != zeta.len() || sigma.ncols() != zeta.len() {
            return Err(Error::DimensionMismatch(format!(
                "prior mean of length {} with a {}x{} scale matrix",
                zeta.len(),
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let sigma_inv = dense_cholesky(&sigma)?.inverse();
        let sigma_inv_zeta = mat_vec(&sigma_inv, &zeta);
        let zeta_quad = zeta.iter().zip(&sigma_inv_zeta).map(|(a, b)| a * b).sum();
        Ok(Self { alpha, rate, zeta, sigma, sigma_inv, sigma_inv_zeta, zeta_quad })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn zeta(&self) -> &[f64] {
        &self.zeta
    }

    pub fn sigma(&self) -> &Mat<f64> {
        &self.sigma
    }

    pub fn sigma_inv(&self) -> &Mat<f64> {
        &self.sigma_inv
    }

    /// `Σ⁻¹ ζ`.
    pub fn sigma_inv_zeta(&self) -> &[f64] {
        &self.sigma_inv_zeta
    }

    /// `ζᵀ Σ⁻¹ ζ`.
    pub fn zeta_quad(&self) -> f64 {
        self.zeta_quad
    }
}

#[derive(Debug, Clone)]
pub struct HyperParams {
    nodes: Vec<NodeHyper>,
}

/// Scale used by the vague default prior on the coefficients.
pub const VAGUE_ETA_SCALE: f64 = 100.0;

impl HyperParams {
    pub fn new(nodes: Vec<NodeHyper>, scheme: &NeighbourhoodScheme) -> Result<Self> {
        if nodes.len() != scheme.n() {
            return Err(Error::DimensionMismatch(format!("{} node priors for {} nodes", nodes.len(), scheme.n())));
        }
        for (k, h) in nodes.iter().enumerate() {
            if h.zeta.len() != scheme.neighbours(k).len() + 1 {
                return Err(Error::DimensionMismatch(format!("prior at node {k} has the wrong length")));
            }
        }
        Ok(Self { nodes })
    }

    /// `α = 0`, `rate = 0`, `ζ = 0`, `Σ = 100 I`.
    pub fn vague(scheme: &NeighbourhoodScheme) -> Self {
        let nodes = (0..scheme.n())
            .map(|k| {
                let p = scheme.neighbours(k).len() + 1;
                let sigma = Mat::from_fn(p, p, |i, j| if i == j { VAGUE_ETA_SCALE } else { 0.0 });
                NodeHyper::new(0.0, 0.0, vec![0.0; p], sigma).expect("diagonal prior is valid")
            })
            .collect();
        Self { nodes }
    }

    pub fn node(&self, k: usize) -> &NodeHyper {
        &self.nodes[k]
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }
}
