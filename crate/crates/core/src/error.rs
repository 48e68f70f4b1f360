use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("no finite solution: k = {k} equals n = {n}")]
    NoFiniteSolution { n: u64, k: u64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("duplicate taxon `{0}`")]
    DuplicateTaxon(String),

    #[error(
        "inconsistent nesting: label `{label}` appears under parents `{first}` and `{second}`"
    )]
    InconsistentNesting {
        label: String,
        first: String,
        second: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("table size exceeded: requested {requested}, limit {limit}")]
    TableSizeExceeded { requested: u64, limit: u64 },

    #[error("rejection sampler exceeded {0} attempts")]
    RejectionLimit(u64),

    #[error("non-convergence: {0}")]
    NonConvergence(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
