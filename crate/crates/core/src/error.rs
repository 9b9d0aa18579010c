use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grain size {size} outside [2, {max}] for dims {dims:?}")]
    GrainSizeOutOfRange { size: f64, max: f64, dims: [usize; 3] },

    #[error("crop origin {origin:?} + extent {extent:?} exceeds dims {dims:?}")]
    CropOutOfBounds {
        origin: [usize; 3],
        extent: [usize; 3],
        dims: [usize; 3],
    },

    #[error("axis {0:?} is not a unit vector")]
    NonUnitAxis([f64; 3]),

    #[error("matrix is not a proper rotation (orthogonality error {0:e})")]
    NotARotation(f64),

    #[error("unstable cubic constants C11={c11}, C12={c12}, C44={c44}")]
    UnstableStiffness { c11: f64, c12: f64, c44: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("design size {n} not in [1, {available}]")]
    DesignSize { n: usize, available: usize },

    #[error("design requires normalized features")]
    NotNormalized,

    #[error("non-finite value in row {row} ({id}), column {col}")]
    NonFinite { row: usize, id: String, col: usize },

    #[error("row {row} ({id}) has {found} values, expected {expected}")]
    RowWidth {
        row: usize,
        id: String,
        found: usize,
        expected: usize,
    },

    #[error("duplicate id {id:?} at row {row}")]
    DuplicateId { row: usize, id: String },

    #[error("training diverged at epoch {epoch}: loss history {history:?}")]
    Diverged { epoch: usize, history: Vec<f64> },

    #[error("missing data for ids: {0:?}")]
    MissingIds(Vec<String>),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing upstream artifact {path}; run `{stage}` first")]
    MissingArtifact { path: PathBuf, stage: &'static str },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
