use std::path::PathBuf;

use thiserror::Error;

use crate::conformal::NodeClass;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node index {index} out of range for graph with {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {context}")]
    NonFinite { context: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    #[error(
        "insufficient calibration data for {class} class: n={n}, alpha={alpha}, \
         adjusted level {bound:.6} is negative"
    )]
    InsufficientCalibration {
        class: NodeClass,
        n: usize,
        alpha: f64,
        bound: f64,
    },

    #[error("calibration split has no {0} nodes")]
    MissingClass(NodeClass),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Wraps the error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code: 1 for numeric failures, 2 for configuration and I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::NonFinite { .. }
            | Error::InsufficientCalibration { .. }
            | Error::MissingClass(_)
            | Error::ShapeMismatch { .. } => 1,
            Error::IndexOutOfRange { .. }
            | Error::InvalidConfig(_)
            | Error::InfeasibleSplit(_)
            | Error::Parse { .. }
            | Error::Io { .. } => 2,
        }
    }
}
