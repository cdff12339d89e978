/// Rectangular lattice with lexicographic node numbering.
///
/// Nodes are numbered from zero internally: `(i, j) -> i * cols + j`, with
/// `i` the row and `j` the column, both zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LatticeGeometry {
    rows: usize,
    cols: usize,
}

impl LatticeGeometry {
    /// # Panics
    /// If either dimension is zero.
    pub fn new(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "lattice dimensions must be positive");
        Self { rows, cols }
    }

    pub fn square(s: usize) -> Self {
        Self::new(s, s)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.rows && j < self.cols);
        i * self.cols + j
    }

    #[inline]
    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k / self.cols, k % self.cols)
    }

    /// Node at signed offset `(dr, dc)` from `(i, j)`, if it lies on the lattice.
    #[inline]
    pub fn offset(&self, i: usize, j: usize, dr: i64, dc: i64) -> Option<usize> {
        let r = i as i64 + dr;
        let c = j as i64 + dc;
        if r < 0 || c < 0 || r >= self.rows as i64 || c >= self.cols as i64 {
            None
        } else {
            Some(self.index(r as usize, c as usize))
        }
    }
}
