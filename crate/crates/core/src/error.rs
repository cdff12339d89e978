use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("SVD did not converge for a {rows}x{cols} matrix")]
    ConvergenceFailure { rows: usize, cols: usize },

    #[error("singular value {value:e} at index {index} is below the floor {floor:e}")]
    SingularSpectrum { index: usize, value: f64, floor: f64 },

    #[error("invalid neighbourhood template: {0}")]
    InvalidTemplate(String),

    #[error("degenerate posterior statistics at node {node}: residual {residual:e}")]
    DegenerateStats { node: usize, residual: f64 },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("empty sample")]
    EmptySample,

    #[error("state dimension {n} exceeds the dense limit {limit}")]
    SizeLimit { n: usize, limit: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("block {block}: {source}")]
    InBlock {
        block: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("time step {t}, member {member}: {source}")]
    InMember {
        t: usize,
        member: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn in_block(self, block: usize) -> Self {
        Error::InBlock { block, source: Box::new(self) }
    }

    pub fn in_member(self, t: usize, member: usize) -> Self {
        Error::InMember { t, member, source: Box::new(self) }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// The innermost error once block/member context has been peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::InBlock { source, .. } | Error::InMember { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures of the numerical pipeline (as opposed to configuration or I/O).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self.root(),
            Error::NotPositiveDefinite { .. }
                | Error::ConvergenceFailure { .. }
                | Error::SingularSpectrum { .. }
                | Error::DegenerateStats { .. }
                | Error::DimensionMismatch(_)
                | Error::SizeLimit { .. }
        )
    }
}
