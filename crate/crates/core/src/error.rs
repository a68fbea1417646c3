use thiserror::Error;

/// Errors produced by the sketch, its primitives and the analysis calculators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("empty stream")]
    EmptyStream,

    #[error("empty sketch")]
    EmptySketch,

    /// A concurrent query found no propagated batch yet.
    #[error("no data")]
    NoData,

    #[error("empty snapshot")]
    EmptySnapshot,

    #[error("cannot sample an odd-length array (len {0})")]
    OddLength(usize),

    #[error("phi must lie in [0, 1], got {0}")]
    InvalidPhi(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Propagation reached the top level; `max_level` is too small for the stream.
    #[error("capacity exceeded: propagation out of level {level} with max level {max_level}")]
    CapacityExceeded { level: usize, max_level: usize },

    #[error("trit index {index} out of range (max level {max_level})")]
    TritOutOfRange { index: usize, max_level: usize },

    #[error("illegal trit value {0}")]
    IllegalTrit(u8),

    #[error("dcas targets alias the same cell")]
    AliasedCells,

    #[error("all {0} reclamation slots are in use")]
    TooManyParticipants(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
