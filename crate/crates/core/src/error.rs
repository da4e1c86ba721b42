use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// An error while reading a particular input file.
    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    /// A record could not be parsed. `line` is 1-based.
    #[error("line {line}: field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("line {line}: duplicate turn {turn_index} in session `{session_id}`")]
    DuplicateTurn {
        line: usize,
        session_id: String,
        turn_index: u32,
    },

    #[error("session `{session_id}`: turn indices are not contiguous from 1 (missing {missing})")]
    NonContiguousTurns { session_id: String, missing: u32 },

    #[error("session `{session_id}`: conflicting satisfaction labels {first} and {second}")]
    ConflictingSatisfaction {
        session_id: String,
        first: i32,
        second: i32,
    },

    #[error("session `{0}`: no voted responses")]
    NoVotedResponses(String),

    #[error("run `{run_id}`: question `{question_id}`: {message}")]
    InvalidRun {
        run_id: String,
        question_id: String,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid metric or mode: {0}")]
    Usage(String),

    #[error("zero-support order: no candidate has at least {n} tokens")]
    ZeroSupport { n: usize },

    #[error("candidate and reference lists differ in length ({candidates} vs {references})")]
    LengthMismatch {
        candidates: usize,
        references: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("no representable tokens")]
    NoRepresentableTokens,

    #[error("degenerate sentence vector")]
    DegenerateSentenceVector,

    #[error("degenerate similarity matrix")]
    DegenerateSimilarityMatrix,

    #[error("line {line}: expected {expected} components, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("vectors of dimension {found} compared with vectors of dimension {expected}")]
    MixedDimensions { expected: usize, found: usize },

    #[error("token vector {index} has norm {norm}, expected 1")]
    NotUnitNorm { index: usize, norm: f64 },

    #[error("invalid stop probability {value} at rank {rank}")]
    InvalidStopProbability { rank: usize, value: f64 },

    #[error("scoring response at rank {rank}: {source}")]
    AtRank {
        rank: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("need at least {needed} {what}, found {found}")]
    TooFew {
        what: &'static str,
        needed: usize,
        found: usize,
    },

    #[error("no strict gold preferences")]
    NoStrictGoldPreferences,

    #[error("`{0}` has no ground-truth response")]
    MissingGroundTruth(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad flags, configuration, or metric/mode combination.
    Usage,
    /// Input files that violate their schema or cannot be scored.
    Data,
    Internal,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Usage(_) => ErrorKind::Usage,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::DuplicateTurn { .. }
            | Error::NonContiguousTurns { .. }
            | Error::ConflictingSatisfaction { .. }
            | Error::NoVotedResponses(_)
            | Error::InvalidRun { .. }
            | Error::DimensionMismatch { .. }
            | Error::NotUnitNorm { .. }
            | Error::MixedDimensions { .. }
            | Error::TooFew { .. }
            | Error::NoStrictGoldPreferences
            | Error::MissingGroundTruth(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorKind::Data,
            Error::AtRank { source, .. } | Error::InFile { source, .. } => source.kind(),
            _ => ErrorKind::Internal,
        }
    }

    pub(crate) fn parse(line: usize, field: &str, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn in_file(path: impl Into<PathBuf>) -> impl FnOnce(Error) -> Error {
        let path = path.into();
        move |e| match e {
            Error::Io { .. } => e,
            other => Error::InFile {
                path,
                source: Box::new(other),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
