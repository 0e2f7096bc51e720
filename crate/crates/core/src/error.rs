use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("integer {0} does not fit in 56 bits")]
    Overflow(i64),

    #[error("strings may not contain NUL bytes")]
    NulInString,

    #[error("object {0} is not a value")]
    NotAValue(String),

    #[error("corrupt database: {0}")]
    Corruption(String),

    #[error("conflicting values for property {key} of object {object}")]
    PropertyConflict { object: String, key: String },

    #[error("buffer pool exhausted: all {0} frames are pinned")]
    PoolExhausted(usize),

    #[error("records are not sorted at position {0}")]
    SortOrder(usize),

    #[error("storage error on {}: {source}", path.display())]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unknown edge id {0}")]
    UnknownEdge(u64),

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown clause `{0}`")]
    UnknownClause(String),

    #[error("line {line}: alias `{alias}` used before it was declared")]
    UndeclaredAlias { line: usize, alias: String },

    #[error("line {line}: alias `{alias}` declared twice")]
    DuplicateAlias { line: usize, alias: String },

    #[error("query is not well designed: {0}")]
    WellDesignedness(String),

    #[error("unknown variable {0} in SELECT or ORDER BY")]
    UnknownVariable(String),

    #[error("mappings are not compatible")]
    Incompatible,

    #[error("strategy unavailable: {0}")]
    StrategyUnavailable(String),

    #[error("no stored permutation serves atom {0} under the chosen variable order")]
    PermutationUnavailable(String),

    #[error("path pattern has no bound endpoint")]
    UnboundEndpoints,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid database directory {}: {reason}", path.display())]
    InvalidDirectory { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn storage(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Storage {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn syntax(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Syntax {
            line,
            column,
            message: message.into(),
        }
    }
}
