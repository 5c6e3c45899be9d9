use thiserror::Error;

use crate::protocol::EntityId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported security level: {0} bits (expected 112 or 128)")]
    UnsupportedSecurityLevel(u32),

    #[error("invalid group parameters: {0}")]
    InvalidGroup(String),

    #[error("node index {index} outside [1, {gamma}]")]
    NodeIndexOutOfRange { index: u32, gamma: u32 },

    #[error("authenticated decryption failed")]
    Authentication,

    #[error("discrete log outside recovery window [-{window}, {window}]")]
    DlogOutOfWindow { window: u64 },

    #[error("coefficient slot {slot} = {value} exceeds bound {bound}")]
    CoefficientOutOfBound { slot: usize, value: i64, bound: u64 },

    #[error("key vector entry {value} outside [0, 2^{bits})")]
    KeyVectorOutOfRange { value: u64, bits: u32 },

    #[error("shares belong to the same party")]
    PartyMismatch,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("dataset is empty or has no features")]
    EmptyDataset,

    #[error("tree depth {depth} exceeds target depth {target}")]
    TreeTooDeep { depth: u32, target: u32 },

    #[error("value {value} outside quantizer domain of feature {feature}")]
    OutOfDomain { feature: usize, value: f64 },

    #[error("feature value {value} outside [0, 2^{bits})")]
    FeatureOutOfRange { value: u64, bits: u32 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("seed covers {actual} node indexes, expected {expected}")]
    SeedLengthMismatch { expected: u32, actual: u32 },

    #[error("infeasible parameters: {0}")]
    Infeasible(String),

    #[error("malformed encoding: {0}")]
    Format(String),

    #[error("unknown entity tag {0}")]
    UnknownEntity(u8),

    #[error("protocol violation at {entity}: {reason}")]
    Protocol { entity: EntityId, reason: String },

    #[error("replayed request at {entity}: {reason}")]
    Replay { entity: EntityId, reason: String },

    #[error("leakage violation: {0}")]
    Leakage(String),

    #[error("key file {file}: {reason}")]
    KeyFile { file: String, reason: String },

    #[error("oracle mismatch: {0}")]
    OracleMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn protocol(entity: EntityId, reason: impl Into<String>) -> Self {
        Error::Protocol { entity, reason: reason.into() }
    }
}
