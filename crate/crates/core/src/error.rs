use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure category, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("missing column `{0}` in header")]
    MissingColumn(String),

    #[error("line {line}: sample `{sample_id}` has {found} member scores, expected {expected}")]
    InconsistentMemberCount {
        line: usize,
        sample_id: String,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: sample `{sample_id}`: score {value} outside [0, 1]")]
    ScoreOutOfRange {
        line: usize,
        sample_id: String,
        value: f64,
    },

    #[error("line {line}: duplicate sample id `{sample_id}`")]
    DuplicateId { line: usize, sample_id: String },

    #[error("line {line}: benign sample `{sample_id}` carries family tag `{family}`")]
    BenignFamily {
        line: usize,
        sample_id: String,
        family: String,
    },

    #[error("{0}")]
    InvalidData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("expected {expected} adjustment coefficients for {variant}, got {found}")]
    ArityMismatch {
        variant: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("member count mismatch: calibration fit on {fit} members, data has {data}")]
    MemberCountMismatch { fit: usize, data: usize },

    #[error("objective returned non-finite value {value} at x = {x}")]
    NonFinite { x: f64, value: f64 },

    #[error("sample `{sample_id}`: {source}")]
    Sample {
        sample_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) => ErrorKind::Usage,
            Error::NonFinite { .. } | Error::Internal(_) => ErrorKind::Numeric,
            Error::Sample { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
