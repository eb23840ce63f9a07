use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Caller supplied an invalid option or combination of options.
    Usage,
    /// Input data has the wrong shape, is malformed, or failed to load.
    Data,
    /// The numerics degenerated (singular step, zero data, rank collapse).
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    #[error(
        "trajectory {trajectory} has length {length}, but {delays} delays need at least {required} samples"
    )]
    EmbeddingLength {
        trajectory: usize,
        length: usize,
        delays: usize,
        required: usize,
    },

    #[error("no window of length {window_len} (start {start}) fits in a trajectory of length {length}")]
    EmptyWindow {
        window_len: usize,
        start: usize,
        length: usize,
    },

    #[error("requested {requested} components but the data only has attainable rank {attainable}")]
    Rank { requested: usize, attainable: usize },

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("rank collapsed to zero after truncating singular values below {rel_tol:e} x sigma_1")]
    RankCollapse { rel_tol: f64 },

    #[error("numerical routine did not converge: {0}")]
    NoConvergence(&'static str),

    #[error("index {index} out of range (have {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("cardinality mismatch: {0}")]
    Cardinality(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error(
        "mirror step is singular at coordinate {coordinate} (1 + eta * x * grad = {denominator:e}); try a smaller learning rate"
    )]
    StepSingularity { coordinate: usize, denominator: f64 },

    #[error("invalid bracket: {0}")]
    Bracket(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("trajectory {trajectory}, step {step}: {source}")]
    Step {
        trajectory: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: expected {expected}, found {actual}", file.display())]
    DimensionMismatch {
        file: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("{}: non-finite value at row {row}, column {column}", file.display())]
    NonFiniteValue {
        file: PathBuf,
        row: usize,
        column: usize,
    },

    #[error("unsupported format_version {0} (expected 1)")]
    UnknownFormatVersion(u64),

    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("{}: {message}", file.display())]
    Parse { file: PathBuf, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_) | Error::InvalidPermutation(_) => ErrorClass::Usage,
            Error::DegenerateData(_)
            | Error::RankCollapse { .. }
            | Error::NoConvergence(_)
            | Error::StepSingularity { .. } => ErrorClass::Numerical,
            Error::Step { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
