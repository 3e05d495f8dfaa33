use serde::{Deserialize, Serialize};

use super::{StatsError, Summary};

/// Success count over trials, for binary rewards such as clicks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunningProportion {
    n: u64,
    s: u64,
}

impl RunningProportion {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(n: u64, s: u64) -> Result<Self, StatsError> {
        let state = Self { n, s };
        state.validate()?;
        Ok(state)
    }

    /// Folds one outcome; only exactly 0 or 1 is accepted.
    pub fn update(&mut self, outcome: f64) -> Result<(), StatsError> {
        let success = if outcome == 1.0 {
            1
        } else if outcome == 0.0 {
            0
        } else {
            return Err(StatsError::InvalidObservation(format!(
                "binary outcome must be 0 or 1, got {outcome}"
            )));
        };
        self.n += 1;
        self.s += success;
        Ok(())
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn successes(&self) -> u64 {
        self.s
    }

    pub fn failures(&self) -> u64 {
        self.n - self.s
    }

    pub(crate) fn validate(&self) -> Result<(), StatsError> {
        if self.s > self.n {
            return Err(StatsError::Malformed(format!(
                "successes {} exceed trials {}",
                self.s, self.n
            )));
        }
        Ok(())
    }
}

impl Summary for RunningProportion {
    fn count(&self) -> u64 {
        self.n
    }

    /// `s / n`, or 0 with no trials.
    fn value(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.s as f64 / self.n as f64
        }
    }
}
