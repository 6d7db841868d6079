use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("zero-norm vector cannot be normalised")]
    ZeroNorm,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("{qubits} qubits exceeds the dense limit of {limit}")]
    Capacity { qubits: usize, limit: usize },

    #[error("class id {class_id} does not fit in {label_qubits} label qubits")]
    LabelOverflow { class_id: usize, label_qubits: usize },

    #[error("label {0} appears more than once")]
    LabelCollision(usize),

    #[error("no training examples for class {0}")]
    MissingClass(usize),

    #[error("projection onto the label space has zero norm")]
    DegenerateProjection,

    #[error("classifier has not been orthogonalised")]
    NotOrthogonalised,

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code used by the CLI when reporting failures.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "E_INVALID_INPUT",
            Error::Shape(_) => "E_SHAPE",
            Error::Degenerate(_) => "E_DEGENERATE",
            Error::ZeroNorm => "E_ZERO_NORM",
            Error::EmptyInput(_) => "E_EMPTY",
            Error::Capacity { .. } => "E_CAPACITY",
            Error::LabelOverflow { .. } => "E_LABEL_OVERFLOW",
            Error::LabelCollision(_) => "E_LABEL_COLLISION",
            Error::MissingClass(_) => "E_MISSING_CLASS",
            Error::DegenerateProjection => "E_DEGENERATE_PROJECTION",
            Error::NotOrthogonalised => "E_STATE",
            Error::Format { .. } => "E_FORMAT",
            Error::Io { .. } => "E_IO",
            Error::Numerical(_) => "E_NUMERICAL",
        }
    }
}
