use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("brute-force oracle limited to n <= {limit}, got n = {n}")]
    OracleTooLarge { n: u32, limit: u32 },

    #[error("int64 overflow bound violated: max |x| = {max_abs} with n = {n} (need max|x| * 2^n < 2^63)")]
    Overflow { max_abs: u64, n: u32 },

    #[error("coefficient {value} at index {index} is not divisible by 2^{n}")]
    InexactDivision { index: u64, value: i64, n: u32 },

    #[error("invalid worker count: {0}")]
    InvalidWorkerCount(String),

    #[error("a worker panicked in phase {phase}; partial results discarded")]
    WorkerPanic { phase: usize },

    #[error("signal kind mismatch: expected {expected}, found {found}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("path already exists: {0}")]
    PathExists(PathBuf),

    #[error("not enough free space for {needed} bytes at {path}")]
    DiskFull { path: PathBuf, needed: u64 },

    #[error("block [{start}, {start}+{count}) out of bounds for 2^{n} elements")]
    OutOfBounds { start: u64, count: u64, n: u32 },

    #[error("I/O failure at byte offset {offset} of {path}: {source}")]
    IoFailure {
        path: PathBuf,
        offset: u64,
        #[source]
        source: io::Error,
    },

    #[error("dataset size mismatch for {path}: expected {expected} bytes, found {found}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("bad metadata in {path}: {reason}")]
    BadMetadata { path: PathBuf, reason: String },

    #[error("bad block size: {0}")]
    BadBlockSize(String),

    #[error("cannot resume: {0}")]
    Resume(String),

    #[error("direct I/O unsupported: {0}")]
    DirectIoUnsupported(String),

    #[error("bad arguments: {0}")]
    BadArguments(String),

    #[error("bad signal spec: {0}")]
    BadSpec(String),

    #[error("bad dimensions: {0}")]
    BadDims(String),

    #[error("empty benchmark report")]
    EmptyReport,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, offset: u64, source: io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            offset,
            source,
        }
    }

    /// True for failures that come from the storage layer rather than from
    /// argument or data validation.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::IoFailure { .. }
                | Error::DiskFull { .. }
                | Error::PathExists(_)
                | Error::DirectIoUnsupported(_)
        )
    }
}
