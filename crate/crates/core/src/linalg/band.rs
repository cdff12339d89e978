//! Symmetric band matrices and their Cholesky factors.
//!
//! Only the lower band is stored, row by row: row `i` holds the entries
//! `(i, i-p), ..., (i, i)` contiguously, so the substitution loops and the
//! factorisation inner products all run over unit-stride slices. Slots that
//! would fall left of column 0 in the first `p` rows stay zero.

use faer::Mat;

use crate::error::{Error, Result};

/// Relative pivot floor for the positive-definiteness check.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    p: usize,
    values: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, p: usize) -> Self {
        let p = p.min(n.saturating_sub(1));
        Self { n, p, values: vec![0.0; n * (p + 1)] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, 0);
        m.values.fill(1.0);
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self { n: diag.len(), p: 0, values: diag.to_vec() }
    }

    /// Builds a band matrix from the lower triangle of a dense symmetric
    /// matrix, keeping entries with `i - j <= p`.
    pub fn from_dense(a: &Mat<f64>, p: usize) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "band matrix needs a square input, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        let mut m = Self::zeros(n, p);
        for i in 0..n {
            for j in i.saturating_sub(m.p)..=i {
                m.set(i, j, a[(i, j)]);
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Storage bandwidth.
    #[inline]
    pub fn bandwidth(&self) -> usize {
        self.p
    }

    /// Largest `i - j` with a non-zero stored entry.
    pub fn effective_bandwidth(&self) -> usize {
        let mut bw = 0;
        for i in 0..self.n {
            let row = self.row(i);
            let lo = i.saturating_sub(self.p);
            if let Some(pos) = row.iter().position(|&v| v != 0.0) {
                bw = bw.max(i - (lo + pos));
            }
        }
        bw
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.p);
        i * (self.p + 1) + self.p - (i - j)
    }

    /// Stored entries of row `i`, columns `max(0, i-p) ..= i`.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let lo = i.saturating_sub(self.p);
        &self.values[self.offset(i, lo)..=self.offset(i, i)]
    }

    /// Symmetric element access; zero outside the band.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.p {
            0.0
        } else {
            self.values[self.offset(i, j)]
        }
    }

    /// Sets `(i, j)` and, implicitly, `(j, i)`.
    ///
    /// # Panics
    /// If `|i - j|` exceeds the storage bandwidth.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.p, "entry ({i}, {j}) outside bandwidth {}", self.p);
        let o = self.offset(i, j);
        self.values[o] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.p, "entry ({i}, {j}) outside bandwidth {}", self.p);
        let o = self.offset(i, j);
        self.values[o] += v;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.values[self.offset(i, i)]).collect()
    }

    /// Copy with a wider storage band.
    pub fn widened(&self, p: usize) -> Self {
        if p <= self.p {
            return self.clone();
        }
        let mut m = Self::zeros(self.n, p);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.p);
            for (k, &v) in self.row(i).iter().enumerate() {
                m.set(i, lo + k, v);
            }
        }
        m
    }

    /// `self + other`, with the wider of the two bandwidths.
    pub fn sum(&self, other: &BandMatrix) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch(format!(
                "cannot add band matrices of size {} and {}",
                self.n, other.n
            )));
        }
        let mut out = self.widened(other.p);
        for i in 0..other.n {
            let lo = i.saturating_sub(other.p);
            for (k, &v) in other.row(i).iter().enumerate() {
                if v != 0.0 {
                    out.add(i, lo + k, v);
                }
            }
        }
        Ok(out)
    }

    /// Symmetric matrix-vector product.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} against band matrix of size {}",
                x.len(),
                self.n
            )));
        }
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.p);
            let row = self.row(i);
            let (diag, off) = row.split_last().expect("rows are never empty");
            let mut acc = diag * x[i];
            for (k, &v) in off.iter().enumerate() {
                let j = lo + k;
                acc += v * x[j];
                y[j] += v * x[i];
            }
            y[i] += acc;
        }
        Ok(y)
    }

    /// Quadratic form `xᵀ Q x`.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        let y = self.mul_vec(x)?;
        Ok(x.iter().zip(&y).map(|(a, b)| a * b).sum())
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut a = Mat::zeros(self.n, self.n);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.p);
            for (k, &v) in self.row(i).iter().enumerate() {
                let j = lo + k;
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        a
    }

    /// Dense principal submatrix on the given (global) indices.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Mat<f64> {
        Mat::from_fn(rows.len(), cols.len(), |a, b| self.get(rows[a], cols[b]))
    }

    /// Number of structurally non-zero entries in row `i` of the full
    /// symmetric matrix (both triangles).
    pub fn row_nnz(&self, i: usize) -> usize {
        let lower = self.row(i).iter().filter(|v| **v != 0.0).count();
        let upper = ((i + 1)..self.n.min(i + self.p + 1)).filter(|&j| self.get(j, i) != 0.0).count();
        lower + upper
    }
}

/// Lower-triangular band factor `L` with `L Lᵀ = Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandCholesky {
    l: BandMatrix,
}

/// Band Cholesky factorisation, `O(n p²)`. The factor keeps the bandwidth of `Q`.
pub fn cholesky_band(q: &BandMatrix) -> Result<BandCholesky> {
    let n = q.n;
    let p = q.p;
    if n == 0 {
        return Err(Error::DimensionMismatch("empty matrix".into()));
    }
    let max_diag = q.diagonal().into_iter().fold(0.0_f64, f64::max);
    let floor = PIVOT_TOLERANCE * max_diag;
    let mut l = q.clone();
    for i in 0..n {
        let lo_i = i.saturating_sub(p);
        for j in lo_i..=i {
            let lo = lo_i.max(j.saturating_sub(p));
            // sum_{k in lo..j} L[i,k] L[j,k]
            let dot = if lo < j {
                let a = &l.values[l.offset(i, lo)..l.offset(i, j)];
                let b = &l.values[l.offset(j, lo)..l.offset(j, j)];
                a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
            } else {
                0.0
            };
            let o = l.offset(i, j);
            let s = l.values[o] - dot;
            if i == j {
                if !(s > floor) || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite { row: i, pivot: s });
                }
                l.values[o] = s.sqrt();
            } else {
                l.values[o] = s / l.values[l.offset(j, j)];
            }
        }
    }
    Ok(BandCholesky { l })
}

const PREFETCH_ROWS: usize = 4;

/// Hints the cache to load `row`; substitution on large factors is otherwise
/// bound by memory latency.
#[inline]
fn prefetch(row: &[f64]) {
    #[cfg(target_arch = "x86_64")]
    for chunk in row.chunks(8) {
        // SAFETY: prefetching is a hint and never faults, and the pointer is in bounds.
        unsafe { std::arch::x86_64::_mm_prefetch::<{ std::arch::x86_64::_MM_HINT_T0 }>(chunk.as_ptr().cast()) };
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = row;
}

impl BandCholesky {
    pub fn factor(&self) -> &BandMatrix {
        &self.l
    }

    pub fn n(&self) -> usize {
        self.l.n
    }

    /// `L` as a dense lower-triangular matrix.
    pub fn lower_dense(&self) -> Mat<f64> {
        let mut a = Mat::zeros(self.l.n, self.l.n);
        for i in 0..self.l.n {
            let lo = i.saturating_sub(self.l.p);
            for (k, &v) in self.l.row(i).iter().enumerate() {
                a[(i, lo + k)] = v;
            }
        }
        a
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.l.n {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} against factor of size {}",
                v.len(),
                self.l.n
            )));
        }
        Ok(())
    }

    /// Forward substitution, `L v = y`, in place.
    pub fn forward_in_place(&self, y: &mut [f64]) -> Result<()> {
        self.check_len(y)?;
        let l = &self.l;
        for i in 0..l.n {
            let lo = i.saturating_sub(l.p);
            if i + PREFETCH_ROWS < l.n {
                prefetch(l.row(i + PREFETCH_ROWS));
            }
            let row = l.row(i);
            let (diag, off) = row.split_last().expect("rows are never empty");
            let dot: f64 = off.iter().zip(&y[lo..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - dot) / diag;
        }
        Ok(())
    }

    /// Backward substitution, `Lᵀ x = v`, in place.
    pub fn backward_in_place(&self, v: &mut [f64]) -> Result<()> {
        self.check_len(v)?;
        let l = &self.l;
        for i in (0..l.n).rev() {
            let lo = i.saturating_sub(l.p);
            if i >= PREFETCH_ROWS {
                prefetch(l.row(i - PREFETCH_ROWS));
            }
            let row = l.row(i);
            let (diag, off) = row.split_last().expect("rows are never empty");
            let xi = v[i] / diag;
            v[i] = xi;
            for (a, vj) in off.iter().zip(&mut v[lo..i]) {
                *vj -= a * xi;
            }
        }
        Ok(())
    }

    /// `log |Q| = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.l.n).map(|i| self.l.values[self.l.offset(i, i)].ln()).sum::<f64>()
    }
}

/// Solves `L Lᵀ x = y` with one forward and one backward sweep, `O(n p)`.
pub fn solve_band(factor: &BandCholesky, y: &[f64]) -> Result<Vec<f64>> {
    let mut x = y.to_vec();
    factor.forward_in_place(&mut x)?;
    factor.backward_in_place(&mut x)?;
    Ok(x)
}

/// Draws from `N(mu, Q⁻¹)` given `L` and a standard-normal vector `z`:
/// `x = mu + w` with `Lᵀ w = z`.
pub fn sample_gaussian_precision(mu: &[f64], factor: &BandCholesky, z: &[f64]) -> Result<Vec<f64>> {
    factor.check_len(mu)?;
    let mut w = z.to_vec();
    factor.backward_in_place(&mut w)?;
    for (wi, m) in w.iter_mut().zip(mu) {
        *wi += m;
    }
    Ok(w)
}

/// `log N(x; mu, Q)` in the precision parameterisation, given the factor of `Q`.
pub fn gaussian_log_density(x: &[f64], mu: &[f64], q: &BandMatrix, factor: &BandCholesky) -> Result<f64> {
    factor.check_len(x)?;
    factor.check_len(mu)?;
    let d: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    let quad = q.quad_form(&d)?;
    let n = x.len() as f64;
    Ok(0.5 * factor.log_det() - 0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * quad)
}
