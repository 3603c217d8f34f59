use std::path::PathBuf;

use crate::vr::EpochRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty vector")]
    EmptyVector,

    #[error("non-finite input")]
    NonFinite,

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("insufficient pretrained labels: k_t = {k_t} > k_s = {k_s}")]
    InsufficientLabels { k_s: usize, k_t: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("condition undefined: downstream label {0} has zero marginal")]
    ConditionUndefined(usize),

    /// Training diverged. The records of the epochs completed before the
    /// failure are kept so callers can still write a partial log.
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss {
        epoch: usize,
        records: Vec<EpochRecord>,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by bad user-supplied parameters rather than
    /// data or numeric failures.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::InsufficientLabels { .. }
        )
    }
}
