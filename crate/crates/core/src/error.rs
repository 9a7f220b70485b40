use thiserror::Error;

/// Errors raised across the graph, network, limit and bound calculators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("graph must have at least one node")]
    EmptyGraph,

    #[error("invalid latent space: {0}")]
    InvalidSpace(String),

    #[error("kernel value {value} at pair ({i}, {j}) lies outside [0, 1]")]
    KernelRange { i: usize, j: usize, value: f64 },

    #[error("latent row {row} lies outside the support box")]
    OutsideSupport { row: usize },

    #[error("not a permutation of 0..{n}: {reason}")]
    InvalidPermutation { n: usize, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("aggregation over an empty neighborhood")]
    EmptyNeighborhood,

    #[error("degenerate normalization: neighborhood weights sum to zero")]
    DegenerateDegree,

    #[error("network has no readout configured")]
    MissingReadout,

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("invalid confidence level rho = {0}")]
    InvalidConfidence(f64),

    #[error("rho = {rho} lies below the validity window; minimal admissible rho is {min_rho}")]
    ValidityWindow { rho: f64, min_rho: f64 },

    #[error("bounded differences are not sharp for max aggregation (Omega(1) in n)")]
    NoSharpBoundedDifferences,

    #[error("closed-form max limit precondition failed: {0}")]
    Precondition(String),

    #[error("degenerate rate fit: {0}")]
    DegenerateFit(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "limit estimate too coarse: stderr {stderr:.3e} >= 10% of smallest MAE {min_mae:.3e} \
         at quadrature size {quad_size} (cap {cap})"
    )]
    LimitResolution {
        stderr: f64,
        min_mae: f64,
        quad_size: usize,
        cap: usize,
    },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
