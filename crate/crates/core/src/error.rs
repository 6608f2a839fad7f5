use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("parse error in {path} line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("featurization scheme mismatch: {0}")]
    Scheme(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },
    #[error("non-finite value produced by {0}")]
    Numerics(&'static str),
    #[error(transparent)]
    Oracle(#[from] ssgde_oracle::OracleError),
    #[error("fold {fold} failed: {source}")]
    Fold { fold: usize, source: Box<Error> },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Error::Shape { op, lhs, rhs }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
