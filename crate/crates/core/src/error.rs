use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("no collaborators")]
    NoCollaborators,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("parameter vector must be non-empty")]
    EmptyParameters,

    #[error("non-finite parameter at index {index}")]
    NonFinite { index: usize },

    #[error("collaborator {0} has sample_count 0")]
    ZeroSamples(u32),

    #[error("duplicate collaborator id {0}")]
    DuplicateId(u32),

    #[error("weight key sets differ")]
    KeyMismatch,

    #[error("weights sum to {sum}, expected 1")]
    WeightsNotNormalized { sum: f64 },

    #[error("matrix not nonnegative")]
    NotNonnegative,

    #[error("rank {k} out of range for a {rows}x{cols} matrix")]
    RankOutOfRange { k: usize, rows: usize, cols: usize },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("divergence: non-finite gradient during local training")]
    Divergence,

    #[error("round {round}: {source}")]
    Round { round: u32, source: Box<Error> },
}
