use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage names, used to report where a run broke down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Preprocess,
    Classify,
    NormalizeHeights,
    FindStems,
    BuildGraph,
    AttributeWood,
    AddLeaves,
    Evaluate,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Preprocess => "preprocess",
            Stage::Classify => "classify",
            Stage::NormalizeHeights => "normalize_heights",
            Stage::FindStems => "find_stems",
            Stage::BuildGraph => "build_wood_graph",
            Stage::AttributeWood => "attribute_wood",
            Stage::AddLeaves => "add_leaves",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Structured outcome of a segmentation run that could not complete.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("pipeline failed at {stage}: {message}")]
pub struct PipelineFailure {
    pub stage: Stage,
    pub message: String,
}

impl PipelineFailure {
    pub fn new(stage: Stage, message: impl Into<String>) -> Self {
        Self {
            stage,
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing labels: {0}")]
    MissingLabels(&'static str),

    #[error("external classifier failed: {0}")]
    External(String),

    #[error(transparent)]
    Pipeline(#[from] PipelineFailure),

    #[error("kernel matrix factorization failed: {0}")]
    Factorization(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("discrete search space exhausted after {0} distinct evaluations")]
    Exhausted(usize),

    #[error("all {0} trials failed")]
    AllTrialsFailed(usize),

    #[error("insufficient trials: need {needed} successful, have {have}")]
    InsufficientTrials { needed: usize, have: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("trial log error: {0}")]
    TrialLog(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
