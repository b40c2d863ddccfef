use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One offending line of a line-delimited input file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineIssue {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

fn join_issues(issues: &[LineIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("class `{0}` has no embedding")]
    MissingClassEmbedding(String),

    #[error("no caption token has an embedding")]
    EmptyInput,

    #[error("non-finite score in {0}")]
    NonFiniteScore(&'static str),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{}: {}", path.display(), join_issues(issues))]
    Parse { path: PathBuf, issues: Vec<LineIssue> },

    #[error("missing proposal file {}", .0.display())]
    MissingProposalFile(PathBuf),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn parse_one(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            issues: vec![LineIssue {
                line,
                message: message.into(),
            }],
        }
    }
}
