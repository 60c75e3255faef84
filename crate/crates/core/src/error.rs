use thiserror::Error;

/// Errors produced by the solver toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix not SPD: non-positive pivot at index {pivot}")]
    NotSpd { pivot: usize },

    #[error("eigensolver did not converge: off-diagonal norm {achieved:e} after {iterations} iterations")]
    EigNonConvergence { iterations: usize, achieved: f64 },

    #[error("insufficient Krylov history: need at least 2 iterations, got {got}")]
    InsufficientKrylovHistory { got: usize },

    #[error("operator not SPD: {0}")]
    OperatorNotSpd(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("duplicate Voronoi seeds after relaxation: indices {0:?}")]
    DuplicateSeeds(Vec<usize>),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid neighborhood: {0}")]
    InvalidNeighborhood(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
