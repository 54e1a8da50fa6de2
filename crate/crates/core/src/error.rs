use thiserror::Error;

/// Errors produced by the weld-seam QA core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scan: {0}")]
    InvalidScan(String),

    #[error("scan is all zero; max-normalization is undefined")]
    AllZeroScan,

    #[error("malformed PGM: {0}")]
    MalformedPgm(String),

    #[error("unsupported bit depth: maxval {0}")]
    UnsupportedBitDepth(u32),

    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown verdict {0:?} (expected \"Faultless\" or \"Erroneous\")")]
    UnknownVerdict(String),

    #[error("insufficient {class} scans: need {needed}, have {available}")]
    InsufficientScans {
        class: String,
        needed: usize,
        available: usize,
    },

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("bad model magic")]
    BadMagic,

    #[error("unsupported model format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("model length mismatch: expected {expected} bytes, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite model parameter in layer {layer}")]
    NonFiniteWeights { layer: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("missing image for scan {0}")]
    MissingImage(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
