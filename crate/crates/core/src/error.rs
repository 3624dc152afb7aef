use thiserror::Error;

use crate::pipeline::Stage;

pub type Result<T, E = CalibError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CalibError {
    /// The point maps onto the line at infinity under the homography.
    #[error("point projects to infinity (|w| = {w:e})")]
    DegenerateProjection { w: f64 },

    #[error("matrix is singular after canonical scaling (|det| = {det:e})")]
    SingularMatrix { det: f64 },

    #[error("matrix has non-finite entries")]
    NonFinite,

    #[error("empty correspondence set")]
    EmptySet,

    #[error("insufficient pairs: need {needed}, got {got}")]
    InsufficientPairs { needed: usize, got: usize },

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("consensus failure: best model has {inliers} inliers of {total} (ratio {ratio:.3} < {required:.3})")]
    ConsensusFailure {
        inliers: usize,
        total: usize,
        ratio: f64,
        required: f64,
    },

    #[error("frame {got} is not after previously ingested frame {last}")]
    OutOfOrderFrame { last: u64, got: u64 },

    #[error("evaluation pairs overlap consumed frames: {0:?}")]
    HeldOutViolation(Vec<u64>),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<CalibError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CalibError {
    pub(crate) fn at(stage: Stage) -> impl FnOnce(CalibError) -> CalibError {
        move |e| CalibError::Stage {
            stage,
            source: Box::new(e),
        }
    }

    /// Innermost error, skipping stage attribution.
    pub fn root(&self) -> &CalibError {
        match self {
            CalibError::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
