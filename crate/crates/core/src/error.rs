use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("design measure has zero total mass")]
    ZeroMass,

    #[error("information matrix is singular")]
    SingularM,

    #[error("subspace of agent {0} is not identified by the design")]
    Singular(usize),

    #[error("no mass outside the group of agent {0}")]
    DegenerateOutsideMass(usize),

    #[error("optimal design puts no mass on the group of agent {0}")]
    DegeneratePi(usize),

    #[error("{0} did not converge")]
    NotConverged(String),

    #[error("individual-rationality intervals do not intersect")]
    Infeasible,

    #[error("design points are not all identical")]
    NotExchangeable,

    #[error("best-response dynamics cycle through {} profiles", .0.len())]
    Oscillation(Vec<Vec<f64>>),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
