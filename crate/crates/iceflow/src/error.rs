//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("normalization stats: {0}")]
    Stats(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("attention metric: {0}")]
    Metric(String),

    #[error("integrator: {0}")]
    Integration(String),

    /// Corrector fixed-point iteration failed to reach tolerance.
    #[error("corrector did not converge; last residual {residual:.3e}")]
    CorrectorDiverged { residual: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Component-level dimension conflict, e.g. on parameter transfer.
    #[error("dimension mismatch in {component}: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        component: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("eigensolver: {0}")]
    Eigen(String),

    #[error("partition: {0}")]
    Partition(String),

    #[error("domain decomposition: {0}")]
    DomainDecomposition(String),

    /// Aggregation found nodes no subdomain predicts for.
    #[error("uncovered nodes in aggregation: {0:?}")]
    UncoveredNodes(Vec<usize>),

    #[error("synthetic data: {0}")]
    Synthetic(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("hash mismatch: {0}")]
    HashMismatch(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
