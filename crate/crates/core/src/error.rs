use thiserror::Error;

/// Errors produced by the learning and inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    InvalidRow { row: usize, message: String },
    #[error("non-positive ΔT at row {0}")]
    NonPositiveInterval(usize),
    #[error("row {row}: unknown level `{level}` for `{column}`")]
    UnknownLevel {
        row: usize,
        column: String,
        level: String,
    },
    #[error("atlas does not cover feature `{0}`")]
    AtlasCoverage(String),
    #[error("invalid atlas: {0}")]
    InvalidAtlas(String),
    #[error("undefined correlation: column `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("graph contains a cycle")]
    Cycle,
    #[error("conflicting constraints: arc {from} -> {to} is both whitelisted and blacklisted")]
    ConstraintConflict { from: String, to: String },
    #[error("collinear design for node `{0}`")]
    Collinear(String),
    #[error("insufficient data for node `{node}`: {message}")]
    InsufficientData { node: String, message: String },
    #[error("structure search exceeded {0} iterations")]
    IterationCap(usize),
    #[error("no bootstrap replicate succeeded")]
    NoReplicates,
    #[error("invalid evidence: {0}")]
    InvalidEvidence(String),
    #[error("infeasible evidence for `{0}`: a deterministic node contradicts the observed values")]
    Infeasible(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Numerical failures (as opposed to malformed inputs).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ZeroVariance(_)
                | Error::Collinear(_)
                | Error::InsufficientData { .. }
                | Error::IterationCap(_)
                | Error::NoReplicates
                | Error::Infeasible(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
