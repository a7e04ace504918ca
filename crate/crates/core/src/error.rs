use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a feature file: bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported file version {0}")]
    UnsupportedVersion(u32),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value at tracklet {tracklet}, frame {frame}, channel {channel}")]
    NonFinite {
        tracklet: usize,
        frame: usize,
        channel: usize,
    },
    #[error("manifest error: {0}")]
    Csv(#[from] csv::Error),
    #[error("unknown domain {0:?} (expected aerial or ground)")]
    UnknownDomain(String),
    #[error("unknown split {0:?} (expected train, query or gallery)")]
    UnknownSplit(String),
    #[error("invalid value {value:?} in column {column}")]
    InvalidField { column: &'static str, value: String },
    #[error("duplicate tracklet_index {0}")]
    DuplicateIndex(usize),
    #[error("missing column {0}")]
    MissingColumn(&'static str),
    #[error("degenerate bin range [{min}, {max}]")]
    DegenerateRange { min: f64, max: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("attention cache does not match this forward pass")]
    StaleCache,
    #[error("instance norm needs at least 2 channels, got {0}")]
    TooFewChannels(usize),
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("batch has no anchor with both a positive and a negative")]
    DegenerateBatch,
    #[error("empty batch")]
    EmptyBatch,
    #[error("need at least {needed} identities, found {found}")]
    TooFewIdentities { needed: usize, found: usize },
    #[error("epoch {epoch} out of range for {max_epochs} epochs")]
    EpochOutOfRange { epoch: usize, max_epochs: usize },
    #[error("parameter group {0:?} is frozen")]
    FrozenGroup(String),
    #[error("re-ranking needs more than k1={k1} elements, got {n}")]
    TooFewElements { k1: usize, n: usize },
    #[error("invalid k: k1={k1}, k2={k2}")]
    DegenerateK { k1: usize, k2: usize },
    #[error("protocol {0} has no queries or no gallery")]
    EmptyProtocol(String),
    #[error("query has no valid match in the gallery")]
    NoRelevant,
    #[error("every protocol is empty")]
    AllEmpty,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
