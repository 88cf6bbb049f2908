use std::path::PathBuf;

/// Errors raised anywhere in the selection pipeline.
///
/// Every variant carries the operation that failed (`module::operation`) so the
/// CLI can report where a run broke without a backtrace.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: rejected input: {msg}")]
    InvalidInput { op: &'static str, msg: String },

    #[error("{op}: dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{op}: rejected spec: {msg}")]
    InvalidSpec { op: &'static str, msg: String },

    #[error("{op}: non-finite activation in layer {layer}")]
    NumericOverflow { op: &'static str, layer: usize },

    #[error("{op}: rejected step: non-finite gradient in layer {layer}")]
    NonFiniteGradient { op: &'static str, layer: usize },

    #[error("{op}: stale cache: {msg}")]
    StaleCache { op: &'static str, msg: String },

    #[error("{op}: pool labels are hidden from selection code")]
    HiddenLabels { op: &'static str },

    #[error("{op}: format error at byte offset {offset}: {msg}")]
    Format {
        op: &'static str,
        offset: u64,
        msg: String,
    },

    #[error("{op}: {path}: line {line}: {msg}")]
    Parse {
        op: &'static str,
        path: String,
        line: usize,
        msg: String,
    },

    #[error("build_corpus: partial corpus, {completed} of {total} samples kept: {source}")]
    PartialCorpus {
        completed: usize,
        total: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{op}: config: {msg}")]
    Config { op: &'static str, msg: String },

    #[error("{op}: {path}: {source}")]
    Io {
        op: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Broad failure class, used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn invalid_input(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidInput {
            op,
            msg: msg.into(),
        }
    }

    pub fn invalid_spec(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidSpec {
            op,
            msg: msg.into(),
        }
    }

    pub fn config(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Config {
            op,
            msg: msg.into(),
        }
    }

    pub fn io(op: &'static str, path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            op,
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidSpec { .. } | Error::Config { .. } => ErrorClass::Config,
            Error::NumericOverflow { .. }
            | Error::NonFiniteGradient { .. }
            | Error::StaleCache { .. } => ErrorClass::Numeric,
            Error::PartialCorpus { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }

    /// 2 config error, 3 data error, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
