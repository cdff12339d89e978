//! Model-based ensemble Kalman filter with sparse precision matrices.
//!
//! The prior for each ensemble member is a Gaussian partially ordered Markov
//! model whose precision matrix is banded on a lattice. Members are updated
//! either by the optimal deterministic affine map or by its block-local
//! approximation.

pub mod block;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod io;
pub mod lattice;
pub mod linalg;
pub mod observation;
pub mod pomm;
pub mod rng;
pub mod sampler;
pub mod update;

pub use error::{Error, Result};
pub use lattice::LatticeGeometry;
pub use observation::ObservationModel;
pub use sampler::Theta;
