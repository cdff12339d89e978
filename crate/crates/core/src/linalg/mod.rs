pub mod band;
pub mod dense;
pub mod sparse;
pub mod svd;

pub use band::{
    cholesky_band, gaussian_log_density, sample_gaussian_precision, solve_band, BandCholesky, BandMatrix,
};
pub use dense::{dense_cholesky, DenseCholesky, DenseMatrix};
pub use sparse::SparseMatrix;
pub use svd::{svd_dense, svd_symmetric, SvdResult};
