use serde::{Deserialize, Serialize};

use super::{require_finite, StatsError, Summary};

/// Paired first and second moments of a bivariate stream, updated with
/// Welford's recurrences.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunningMoments {
    n: u64,
    mean_x: f64,
    mean_y: f64,
    /// Sum of squared deviations of x.
    m2_x: f64,
    /// Sum of squared deviations of y.
    m2_y: f64,
    /// Sum of co-deviations of x and y.
    cross: f64,
}

impl RunningMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, x: f64, y: f64) -> Result<(), StatsError> {
        require_finite("x", x)?;
        require_finite("y", y)?;
        self.n += 1;
        let n = self.n as f64;
        let dx = x - self.mean_x;
        let dy = y - self.mean_y;
        self.mean_x += dx / n;
        self.mean_y += dy / n;
        // old deviation times new deviation keeps each sum non-negative
        self.m2_x += dx * (x - self.mean_x);
        self.m2_y += dy * (y - self.mean_y);
        self.cross += dx * (y - self.mean_y);
        Ok(())
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn mean_x(&self) -> f64 {
        self.mean_x
    }

    pub fn mean_y(&self) -> f64 {
        self.mean_y
    }

    /// Sample variance of x; `None` with fewer than two observations.
    pub fn variance(&self) -> Option<f64> {
        (self.n >= 2).then(|| self.m2_x / (self.n - 1) as f64)
    }

    /// Sample variance of y; `None` with fewer than two observations.
    pub fn variance_y(&self) -> Option<f64> {
        (self.n >= 2).then(|| self.m2_y / (self.n - 1) as f64)
    }

    /// Sample covariance; `None` with fewer than two observations.
    pub fn covariance(&self) -> Option<f64> {
        (self.n >= 2).then(|| self.cross / (self.n - 1) as f64)
    }

    pub(crate) fn validate(&self) -> Result<(), StatsError> {
        let fields = [self.mean_x, self.mean_y, self.m2_x, self.m2_y, self.cross];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::Malformed("moments must be finite".into()));
        }
        if self.m2_x < 0.0 || self.m2_y < 0.0 {
            return Err(StatsError::Malformed(
                "squared deviations must be non-negative".into(),
            ));
        }
        if self.n == 0 && fields.iter().any(|v| *v != 0.0) {
            return Err(StatsError::Malformed("empty moments must be zero".into()));
        }
        Ok(())
    }
}

impl Summary for RunningMoments {
    fn count(&self) -> u64 {
        self.n
    }

    fn value(&self) -> f64 {
        self.mean_x
    }
}
