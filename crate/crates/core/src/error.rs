use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification of an [`Error`], used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// A data invariant does not hold (duplicate ids, bad cross references, bad arguments).
    Validation,
    /// The requested metric does not exist for the input (e.g. no negative pairs).
    UndefinedMetric,
    /// The file could not be read, written or decoded.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("embedding file: bad magic {found:?}, expected \"SVEM\"")]
    BadMagic { found: [u8; 4] },
    #[error("embedding file: unsupported version {0}, expected 1")]
    UnsupportedVersion(u16),
    #[error("embedding file: nonzero {field} field ({value:#x})")]
    NonzeroReserved { field: &'static str, value: u32 },
    #[error("embedding file: header too short ({actual} bytes, expected 24)")]
    ShortHeader { actual: usize },
    #[error("embedding file: truncated payload, expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("embedding file: {extra} trailing bytes after payload")]
    TrailingBytes { extra: u64 },
    #[error("embedding file: header declares dim 0")]
    ZeroDim,
    #[error("embedding row {row} contains a non-finite value")]
    NonFinite { row: usize },
    #[error("embedding row {row} has zero norm")]
    ZeroNorm { row: usize },
    #[error("matrix payload has {len} values, not a multiple of dim {dim}")]
    RaggedMatrix { len: usize, dim: usize },

    #[error("manifest line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("manifest line {line}: sample {sample_id:?}: {message}")]
    InvalidRecord {
        line: usize,
        sample_id: String,
        message: String,
    },
    #[error("manifest line {line}: duplicate sample_id {sample_id:?} (first seen on line {first_line})")]
    DuplicateSampleId {
        line: usize,
        sample_id: String,
        first_line: usize,
    },
    #[error("sample {sample_id:?}: {message}")]
    InvalidSample { sample_id: String, message: String },

    #[error("sample {sample_id:?} references embedding row {row}, but the matrix has {row_count} rows")]
    RowOutOfRange {
        sample_id: String,
        row: usize,
        row_count: usize,
    },
    #[error("embedding row {row} is referenced by both {first:?} and {second:?}")]
    RowReferencedTwice { row: usize, first: String, second: String },
    #[error("{count} embedding rows are never referenced (first: row {first})")]
    RowsUnreferenced { count: usize, first: usize },
    #[error("dataset {0:?} has no records")]
    EmptyDataset(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("vector {index} has zero norm or non-finite values")]
    DegenerateVector { index: usize },
    #[error("no samples in scope {0}")]
    EmptyScope(String),
    #[error("pair count overflows 64-bit arithmetic ({0} samples)")]
    PairCountOverflow(u64),
    #[error("need {needed} speakers, only {available} available")]
    TooFewSpeakers { needed: usize, available: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("target {requested} is unreachable; best achievable with a nonempty accept set is {achievable}")]
    TargetUnreachable { requested: f64, achievable: f64 },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Io { .. }
            | BadMagic { .. }
            | UnsupportedVersion(_)
            | NonzeroReserved { .. }
            | ShortHeader { .. }
            | Truncated { .. }
            | TrailingBytes { .. }
            | ZeroDim
            | MalformedLine { .. }
            | Csv(_)
            | Json(_) => ErrorKind::Io,
            UndefinedMetric(_) | TargetUnreachable { .. } => ErrorKind::UndefinedMetric,
            _ => ErrorKind::Validation,
        }
    }
}
