use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GsbmError {
    #[error("time {t} outside [0, 1]")]
    TimeDomain { t: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("conditional drift is singular at t = {t}: std is zero with sigma = {sigma}")]
    Singularity { t: f64, sigma: f64 },

    #[error("non-finite state cost {value} at t = {t}, x = {x:?}")]
    NonFiniteCost { t: f64, x: Vec<f64>, value: f64 },

    #[error("spline optimization diverged at step {step} (objective = {objective})")]
    Divergence { step: usize, objective: f64 },

    #[error("simulation produced a non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("covariance matrix is not positive definite after jitter (size {size})")]
    NotPositiveDefinite { size: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate weighted batch: {0}")]
    DegenerateBatch(String),

    #[error("training produced a non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("epoch {epoch}, {stage}: {source}")]
    Stage {
        epoch: usize,
        stage: &'static str,
        #[source]
        source: Box<GsbmError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = GsbmError> = std::result::Result<T, E>;

impl GsbmError {
    pub(crate) fn at_stage(self, epoch: usize, stage: &'static str) -> Self {
        GsbmError::Stage {
            epoch,
            stage,
            source: Box::new(self),
        }
    }
}
