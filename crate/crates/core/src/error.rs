use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: zero valid rows")]
    NoValidRows(String),
    #[error("missing column(s) {missing:?} in {path}")]
    MissingColumns { path: String, missing: Vec<String> },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("dataset eliminated by k-core (min_degree = {0})")]
    EmptyKCore(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("user {user} has {count} interaction(s); temporal split needs at least 2")]
    TooFewInteractions { user: String, count: usize },
    #[error("node {0} has zero degree")]
    ZeroDegree(usize),
    #[error("user {user} already interacted with item {item}")]
    DuplicateEdge { user: usize, item: usize },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },
    #[error("imputer is not fitted")]
    NotFitted,
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("config hash mismatch: expected {expected}, found {found}")]
    ConfigMismatch { expected: String, found: String },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
