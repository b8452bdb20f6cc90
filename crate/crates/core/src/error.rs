use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("unknown layer `{layer}` (available: {available})")]
    UnknownLayer { layer: String, available: String },

    #[error(
        "distill-layer resolution mismatch: teacher {teacher:?} vs student {student:?} at `{layer}`"
    )]
    ResolutionMismatch {
        layer: String,
        teacher: (usize, usize),
        student: (usize, usize),
    },

    #[error("{what}: truncated payload, expected {expected} bytes, got {actual}")]
    Truncated {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("malformed {what}: {detail}")]
    Malformed { what: String, detail: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
