use serde::{Deserialize, Serialize};

use super::{require_finite, StatsError, Summary};

/// Streaming arithmetic mean.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunningMean {
    n: u64,
    mean: f64,
}

impl RunningMean {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(n: u64, mean: f64) -> Result<Self, StatsError> {
        let state = Self { n, mean };
        state.validate()?;
        Ok(state)
    }

    pub fn update(&mut self, x: f64) -> Result<(), StatsError> {
        require_finite("observation", x)?;
        self.n += 1;
        self.mean += (x - self.mean) / self.n as f64;
        Ok(())
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// Zero before the first observation.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub(crate) fn validate(&self) -> Result<(), StatsError> {
        if !self.mean.is_finite() {
            return Err(StatsError::Malformed("mean must be finite".into()));
        }
        if self.n == 0 && self.mean != 0.0 {
            return Err(StatsError::Malformed("empty mean must be zero".into()));
        }
        Ok(())
    }
}

impl Summary for RunningMean {
    fn count(&self) -> u64 {
        self.n
    }

    fn value(&self) -> f64 {
        self.mean
    }
}
