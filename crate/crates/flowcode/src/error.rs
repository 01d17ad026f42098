use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    Shape {
        node: usize,
        op: &'static str,
        detail: String,
    },

    #[error("record output must be a scalar, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("field tag mismatch: weights are for `{expected}`, observations are for `{actual}`")]
    FieldMismatch { expected: String, actual: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("degenerate geometry: {0}")]
    Geometry(String),

    #[error("field `{0}` has zero variance on the training split")]
    ZeroVariance(String),

    #[error("spearman undefined: {0} sequence is constant")]
    ConstantSequence(&'static str),

    #[error("reference coefficient is zero for case `{0}`; relative error undefined")]
    ZeroReference(String),

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    BadVersion { expected: u32, found: u32 },

    #[error("file truncated while reading {0}")]
    Truncated(String),

    #[error("array `{name}` has {found} entries, header says {expected}")]
    LengthMismatch {
        name: String,
        expected: usize,
        found: usize,
    },

    #[error("config error at `{key}`: {detail}")]
    Config { key: String, detail: String },

    #[error("stage `{stage}` requires `{missing}` to have completed first")]
    MissingStage { stage: String, missing: String },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
