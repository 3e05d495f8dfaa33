//! Fixed-size online estimators. Every update costs O(1) for scalar
//! summaries and O(d²) for the linear model, independent of stream length.

mod linear;
mod list;
mod mean;
mod moments;
mod proportion;
mod state;

pub use linear::{OnlineLinearModel, DEFAULT_RIDGE};
pub use list::StatList;
pub use mean::RunningMean;
pub use moments::RunningMoments;
pub use proportion::RunningProportion;
pub use state::{StatKind, StatState};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("feature vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("linear model is numerically singular")]
    SingularModel,
    #[error("statistic list is empty")]
    EmptyList,
    #[error("unknown statistic kind `{0}`")]
    UnknownKind(String),
    #[error("expected statistic kind `{expected}`, found `{found}`")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("malformed statistic document: {0}")]
    Malformed(String),
}

/// A scalar summary that can be ranked inside a [`StatList`].
pub trait Summary {
    /// Number of observations folded in.
    fn count(&self) -> u64;
    /// The point estimate used for ranking.
    fn value(&self) -> f64;
}

pub(crate) fn require_finite(what: &str, x: f64) -> Result<(), StatsError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(StatsError::InvalidObservation(format!(
            "{what} must be finite, got {x}"
        )))
    }
}
