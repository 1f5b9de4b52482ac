use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected length {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    Domain(&'static str),

    #[error("incompatible dimensions: {0}")]
    Dimension(String),

    #[error("invalid map parameters: {0}")]
    InvalidMap(String),

    #[error("degenerate path: {0}")]
    DegeneratePath(String),

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("undefined arc: {0}")]
    UndefinedArc(String),

    #[error("rank-deficient Jacobian (smallest singular value {sigma_min:e})")]
    SingularProjector { sigma_min: f64 },

    #[error("operator is not positive definite (p^T A p = {curvature:e} at iteration {iteration})")]
    NotPositiveDefinite { iteration: usize, curvature: f64 },

    #[error("optimization diverged at step {step}: {what}")]
    Diverged { step: usize, what: String },

    #[error("invalid metric: {0}")]
    InvalidMetric(String),

    #[error("undefined score: {0}")]
    UndefinedScore(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("disconnected graph: no route between the endpoints")]
    Disconnected,

    #[error("scenario construction failed: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Shape { expected, actual });
    }
    Ok(())
}

pub(crate) fn check_finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(what))
    }
}
