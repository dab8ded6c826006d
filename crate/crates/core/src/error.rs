use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape spec: {0}")]
    InvalidSpec(String),

    #[error("surface sampling stalled: {accepted} accepted out of {proposals} proposals")]
    SamplingStalled { accepted: usize, proposals: usize },

    #[error("training labels contain a single class")]
    SingleClass,

    #[error("dual solver did not converge: KKT residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("brute-force dual supports at most 8 points, got {0}")]
    TooLarge(usize),

    #[error("active set has no free support vectors")]
    DegenerateActiveSet,

    #[error("reduced KKT system is singular (condition number {condition:.3e})")]
    SingularKkt { condition: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("iso-surface is empty")]
    EmptySurface,

    #[error("mesh has no triangles")]
    EmptyMesh,

    #[error("IoU undefined: union of both volumes is empty on the sample set")]
    UndefinedIoU,

    #[error("task skipped: {0}")]
    TaskSkipped(Box<Error>),

    #[error("every task in the batch was skipped at step {step}")]
    AllTasksSkipped { step: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Errors raised by a degenerate inner SVM problem; the trainer skips such tasks.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Error::SingleClass | Error::DegenerateActiveSet | Error::SingularKkt { .. }
        )
    }
}
