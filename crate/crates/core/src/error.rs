use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid pass name {name:?}: {reason}")]
    InvalidPass { name: String, reason: &'static str },

    #[error("phase order token {index} ({token:?}): {reason}")]
    PhaseOrderParse {
        index: usize,
        token: String,
        reason: &'static str,
    },

    #[error("IR line {line}: {kind}")]
    Ir { line: usize, kind: IrErrorKind },

    #[error("degenerate feature vector (all zeros)")]
    DegenerateVector,

    #[error("toolchain configuration: {0}")]
    Toolchain(String),

    #[error("no candidate passed final validation for kernel {kernel}")]
    NoValidCandidate { kernel: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IrErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("branch to undefined label {0:?}")]
    UndefinedTarget(String),
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
    #[error("duplicate function {0:?}")]
    DuplicateFunction(String),
    #[error("block {0:?} has no terminator")]
    MissingTerminator(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn csv(context: impl Into<String>, source: csv::Error) -> Self {
        Error::Csv {
            context: context.into(),
            source,
        }
    }
}
