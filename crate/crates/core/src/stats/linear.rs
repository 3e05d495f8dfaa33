use serde::{Deserialize, Serialize};

use super::{require_finite, StatsError};

pub const DEFAULT_RIDGE: f64 = 0.01;

/// Ridge regression fitted in a stream.
///
/// Keeps the regularized Gram matrix `A = λI + Σ x̃x̃ᵀ` and the moment vector
/// `b = Σ x̃y`, where `x̃` is the feature vector with an intercept `1`
/// prepended. Coefficients are solved on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LinearRepr", into = "LinearRepr")]
pub struct OnlineLinearModel {
    d: usize,
    /// Row-major `d × d`.
    gram: Vec<f64>,
    moment: Vec<f64>,
    n: u64,
    lambda: f64,
}

impl OnlineLinearModel {
    /// A model over `features` regressors plus an intercept.
    pub fn new(features: usize, lambda: f64) -> Result<Self, StatsError> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(StatsError::InvalidObservation(format!(
                "ridge constant must be finite and non-negative, got {lambda}"
            )));
        }
        let d = features + 1;
        let mut gram = vec![0.0; d * d];
        for i in 0..d {
            gram[i * d + i] = lambda;
        }
        Ok(Self {
            d,
            gram,
            moment: vec![0.0; d],
            n: 0,
            lambda,
        })
    }

    /// Dimension including the intercept.
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn update(&mut self, y: f64, features: &[f64]) -> Result<(), StatsError> {
        if features.len() + 1 != self.d {
            return Err(StatsError::DimensionMismatch {
                expected: self.d - 1,
                got: features.len(),
            });
        }
        require_finite("response", y)?;
        for &f in features {
            require_finite("feature", f)?;
        }
        let d = self.d;
        let x = |i: usize| if i == 0 { 1.0 } else { features[i - 1] };
        for i in 0..d {
            let xi = x(i);
            for j in 0..d {
                self.gram[i * d + j] += xi * x(j);
            }
            self.moment[i] += xi * y;
        }
        self.n += 1;
        Ok(())
    }

    /// Solves `A·β = b` by Cholesky factorization. Intercept first.
    pub fn coefs(&self) -> Result<Vec<f64>, StatsError> {
        let d = self.d;
        let scale = (0..d)
            .map(|i| self.gram[i * d + i].abs())
            .fold(0.0_f64, f64::max);
        if scale == 0.0 {
            return Err(StatsError::SingularModel);
        }
        let tol = scale * f64::EPSILON * d as f64;
        // lower-triangular factor L with A = L Lᵀ
        let mut l = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let mut sum = self.gram[i * d + j];
                for k in 0..j {
                    sum -= l[i * d + k] * l[j * d + k];
                }
                if i == j {
                    if sum <= tol {
                        return Err(StatsError::SingularModel);
                    }
                    l[i * d + i] = sum.sqrt();
                } else {
                    l[i * d + j] = sum / l[j * d + j];
                }
            }
        }
        let mut z = vec![0.0; d];
        for i in 0..d {
            let mut sum = self.moment[i];
            for k in 0..i {
                sum -= l[i * d + k] * z[k];
            }
            z[i] = sum / l[i * d + i];
        }
        let mut beta = vec![0.0; d];
        for i in (0..d).rev() {
            let mut sum = z[i];
            for k in i + 1..d {
                sum -= l[k * d + i] * beta[k];
            }
            beta[i] = sum / l[i * d + i];
        }
        Ok(beta)
    }

    /// Prediction `β·x̃` for one feature vector.
    pub fn predict(&self, features: &[f64]) -> Result<f64, StatsError> {
        if features.len() + 1 != self.d {
            return Err(StatsError::DimensionMismatch {
                expected: self.d - 1,
                got: features.len(),
            });
        }
        let beta = self.coefs()?;
        Ok(beta[0]
            + beta[1..]
                .iter()
                .zip(features)
                .map(|(b, x)| b * x)
                .sum::<f64>())
    }

    pub fn gram(&self) -> Vec<Vec<f64>> {
        self.gram.chunks(self.d).map(<[f64]>::to_vec).collect()
    }

    pub fn moment(&self) -> &[f64] {
        &self.moment
    }
}

#[derive(Serialize, Deserialize)]
struct LinearRepr {
    d: usize,
    n: u64,
    lambda: f64,
    #[serde(rename = "A")]
    gram: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl From<OnlineLinearModel> for LinearRepr {
    fn from(m: OnlineLinearModel) -> Self {
        LinearRepr {
            gram: m.gram(),
            d: m.d,
            n: m.n,
            lambda: m.lambda,
            b: m.moment,
        }
    }
}

impl TryFrom<LinearRepr> for OnlineLinearModel {
    type Error = StatsError;

    fn try_from(r: LinearRepr) -> Result<Self, StatsError> {
        let malformed = |msg: &str| Err(StatsError::Malformed(msg.to_string()));
        if r.d == 0 {
            return malformed("dimension must be at least 1");
        }
        if r.b.len() != r.d || r.gram.len() != r.d || r.gram.iter().any(|row| row.len() != r.d) {
            return malformed("matrix and vector shapes must match d");
        }
        if !(r.lambda.is_finite() && r.lambda >= 0.0) {
            return malformed("lambda must be finite and non-negative");
        }
        let gram: Vec<f64> = r.gram.into_iter().flatten().collect();
        if gram.iter().chain(&r.b).any(|v| !v.is_finite()) {
            return malformed("entries must be finite");
        }
        for i in 0..r.d {
            for j in 0..i {
                if gram[i * r.d + j] != gram[j * r.d + i] {
                    return malformed("A must be symmetric");
                }
            }
        }
        Ok(OnlineLinearModel {
            d: r.d,
            gram,
            moment: r.b,
            n: r.n,
            lambda: r.lambda,
        })
    }
}
