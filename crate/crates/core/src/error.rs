use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("mesh has no boundary")]
    NoBoundary,
    #[error("mesh has {0} boundary loops, expected one")]
    MultipleBoundaries(usize),
    #[error("non-manifold edge ({0}, {1})")]
    NonManifold(usize, usize),
    #[error("degenerate triangle {0}")]
    DegenerateTriangle(usize),
    #[error("linear solver did not converge: {0}")]
    SolverNonConvergence(String),
    #[error("mesh has no uv coordinates")]
    MissingUv,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("pixel ({row}, {col}) outside {size}x{size} map")]
    OutOfBounds { row: i64, col: i64, size: usize },
    #[error("unknown region label {0}")]
    UnknownLabel(u8),
    #[error("corrupt file at byte {offset}: {message}")]
    Corrupt { offset: u64, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
