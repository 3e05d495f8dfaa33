use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::Deserialize;
use serde_json::json;

use super::mean_goal::{
    default_activity_map, default_cold_start_goal, resolve_context, validate_goal_params,
    GoalFields,
};
use super::{finite_field, user_label, DecisionOutcome, Policy, PolicyConfig, PolicyError, Scope};
use crate::document::Document;
use crate::stats::{OnlineLinearModel, RunningMean, DEFAULT_RIDGE};
use crate::theta::DEFAULT_NAME;

pub(crate) const KIND: &str = "linear_goal";
/// θ name of the running mean kept next to the model.
pub const MEAN_NAME: &str = "mean";

/// Learned goal setting.
///
/// With `δ = goal − mean` (the user's running mean distance), the reward is
/// modelled as `r = β0 + β1·δ + β2·δ²` and fitted in the stream. Decisions
/// aim at the vertex of the fitted parabola, perturbed by Gaussian
/// exploration noise.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearGoal {
    #[serde(default = "default_delta_min")]
    pub delta_min: f64,
    #[serde(default = "default_delta_max")]
    pub delta_max: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_exploration_sd")]
    pub exploration_sd: f64,
    #[serde(default = "default_cold_start_goal")]
    pub cold_start_goal: f64,
    /// Observations a label's model needs before its vertex is trusted;
    /// until then the pre-noise δ* is 0.
    #[serde(default)]
    pub min_observations: u64,
    #[serde(default = "default_activity_map")]
    pub activity_map: BTreeMap<String, String>,
    #[serde(default)]
    pub fields: GoalFields,
}

fn default_delta_min() -> f64 {
    -5.0
}

fn default_delta_max() -> f64 {
    5.0
}

fn default_lambda() -> f64 {
    DEFAULT_RIDGE
}

fn default_exploration_sd() -> f64 {
    0.5
}

/// Maximizer of `β0 + β1·δ + β2·δ²` over `[lo, hi]` when the parabola opens
/// downward; otherwise 0 clamped into the interval.
pub fn optimal_delta(coefs: &[f64], lo: f64, hi: f64) -> f64 {
    let (b1, b2) = (coefs[1], coefs[2]);
    let delta = if b2 < 0.0 { -b1 / (2.0 * b2) } else { 0.0 };
    delta.clamp(lo, hi)
}

impl LinearGoal {
    pub fn from_config(config: &PolicyConfig) -> Result<Self, PolicyError> {
        let policy: Self = config.parse_params()?;
        let finite = [
            policy.delta_min,
            policy.delta_max,
            policy.lambda,
            policy.exploration_sd,
        ];
        if finite.iter().any(|v| !v.is_finite()) || policy.delta_min > policy.delta_max {
            return Err(PolicyError::Config(
                "delta bounds must be finite with delta_min <= delta_max".into(),
            ));
        }
        if policy.lambda <= 0.0 {
            return Err(PolicyError::Config("lambda must be positive".into()));
        }
        if policy.exploration_sd < 0.0 {
            return Err(PolicyError::Config(
                "exploration_sd must be non-negative".into(),
            ));
        }
        validate_goal_params(policy.cold_start_goal, &policy.activity_map)?;
        Ok(policy)
    }

    fn new_model(&self) -> Result<OnlineLinearModel, PolicyError> {
        Ok(OnlineLinearModel::new(2, self.lambda)?)
    }

    /// Current coefficients for a θ label; zero before any observation.
    pub fn coefs(&self, scope: &Scope<'_>, label: &str) -> Result<Vec<f64>, PolicyError> {
        Ok(self.model(scope, label)?.coefs()?)
    }

    fn model(&self, scope: &Scope<'_>, label: &str) -> Result<OnlineLinearModel, PolicyError> {
        let model =
            match scope.load::<OnlineLinearModel>(DEFAULT_NAME, &self.fields.theta_key, label)? {
                Some(m) => m,
                None => self.new_model()?,
            };
        if model.dim() != 3 {
            return Err(PolicyError::Config(format!(
                "stored model has dimension {}, expected 3",
                model.dim()
            )));
        }
        Ok(model)
    }
}

impl Policy for LinearGoal {
    fn kind(&self) -> &'static str {
        KIND
    }

    fn decide(
        &self,
        scope: &Scope<'_>,
        context: &Document,
        rng: &mut dyn RngCore,
    ) -> Result<DecisionOutcome, PolicyError> {
        let (label, activity) = resolve_context(context, &self.fields, &self.activity_map)?;
        let mean: RunningMean = scope
            .load(MEAN_NAME, &self.fields.theta_key, &label)?
            .unwrap_or_default();
        let model = self.model(scope, &label)?;
        let coefs = model.coefs()?;
        let delta_star = if model.n() < self.min_observations {
            0.0_f64.clamp(self.delta_min, self.delta_max)
        } else {
            optimal_delta(&coefs, self.delta_min, self.delta_max)
        };
        let noise = if self.exploration_sd > 0.0 {
            self.exploration_sd * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        let delta = (delta_star + noise).clamp(self.delta_min, self.delta_max);
        let cold = mean.mean() == 0.0;
        let goal = if cold {
            self.cold_start_goal
        } else {
            mean.mean() + delta
        };
        Ok(DecisionOutcome {
            action: json!({
                self.fields.activity.as_str(): activity,
                self.fields.goal.as_str(): goal,
            }),
            log_hint: Some(json!({
                "label": label,
                "mean": mean.mean(),
                "coefs": coefs,
                "delta_star": delta_star,
                "delta": delta,
                "cold_start": cold,
            })),
        })
    }

    fn summarize(
        &self,
        scope: &Scope<'_>,
        context: &Document,
        action: &Document,
        reward: &Document,
    ) -> Result<(), PolicyError> {
        let (_, label) = user_label(context, &self.fields.weather, &self.fields.user)?;
        let goal = finite_field(action, &self.fields.goal, PolicyError::Action)?;
        let km = finite_field(reward, &self.fields.reward, PolicyError::Reward)?;
        let key = &self.fields.theta_key;
        // δ uses the mean before this observation is folded in
        let prior_mean = scope.fold(
            MEAN_NAME,
            key,
            &label,
            || Ok(RunningMean::new()),
            |m| {
                let before = m.mean();
                m.update(km)?;
                Ok(before)
            },
        )?;
        let delta = goal - prior_mean;
        scope.fold(
            DEFAULT_NAME,
            key,
            &label,
            || self.new_model(),
            |model| Ok(model.update(km, &[delta, delta * delta])?),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::test_support::store;
    use crate::policy::NoChildren;
    use crate::stats::StatKind;
    use crate::theta::{ThetaKey, ThetaStore};
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Normal;

    fn policy(params: Document) -> LinearGoal {
        LinearGoal::from_config(&PolicyConfig::new(KIND, params)).unwrap()
    }

    #[test]
    fn vertex_of_downward_parabola() {
        assert_eq!(optimal_delta(&[0.0, 2.0, -1.0], -5.0, 5.0), 1.0);
    }

    #[test]
    fn upward_parabola_falls_back_to_zero() {
        assert_eq!(optimal_delta(&[0.0, 2.0, 0.5], -5.0, 5.0), 0.0);
        assert_eq!(optimal_delta(&[0.0, 2.0, 0.0], -5.0, 5.0), 0.0);
        assert_eq!(optimal_delta(&[0.0, 2.0, 0.0], 0.5, 5.0), 0.5);
    }

    #[test]
    fn vertex_maximizes_over_interval_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let b: Vec<f64> = vec![
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-5.0..-0.01),
            ];
            let (lo, hi) = (-5.0, 5.0);
            let f = |d: f64| b[0] + b[1] * d + b[2] * d * d;
            let best_grid = (0..=10_000)
                .map(|i| lo + (hi - lo) * i as f64 / 10_000.0)
                .fold(f64::NEG_INFINITY, |acc, d| acc.max(f(d)));
            let d = optimal_delta(&b, lo, hi);
            assert!(f(d) >= best_grid - 1e-9, "{b:?}: {d}");
        }
    }

    #[test]
    fn cold_start_uses_default_goal() {
        let s = store(&[1]);
        let p = policy(json!({}));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = p
            .decide(
                &Scope::new(&s, 1, &NoChildren),
                &json!({"weather": "sunny", "userid": 3}),
                &mut rng,
            )
            .unwrap();
        assert_eq!(out.action, json!({"type": "run", "distance": 1.0}));
    }

    #[test]
    fn vertex_ignored_until_enough_observations() {
        let s = store(&[1]);
        let scope = Scope::new(&s, 1, &NoChildren);
        s.set_theta(
            &scope.key(MEAN_NAME, "weather-uid", "sunny3"),
            RunningMean::from_parts(10, 4.0).unwrap().to_document(),
        )
        .unwrap();
        let mut model = OnlineLinearModel::new(2, 1e-9).unwrap();
        for i in 0..10 {
            let d = -2.0 + 0.4 * i as f64;
            model.update(5.0 + 2.0 * d - d * d, &[d, d * d]).unwrap();
        }
        s.set_theta(
            &scope.key(DEFAULT_NAME, "weather-uid", "sunny3"),
            model.to_document(),
        )
        .unwrap();
        let ctx = json!({"weather": "sunny", "userid": 3});
        let star = |min: u64| {
            let p = policy(json!({"exploration_sd": 0.0, "min_observations": min}));
            let out = p
                .decide(&scope, &ctx, &mut ChaCha8Rng::seed_from_u64(1))
                .unwrap();
            out.log_hint.unwrap()["delta_star"].as_f64().unwrap()
        };
        assert_eq!(star(11), 0.0);
        assert!((star(10) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn noiseless_decision_aims_at_vertex() {
        let s = store(&[1]);
        let p = policy(json!({"exploration_sd": 0.0}));
        let scope = Scope::new(&s, 1, &NoChildren);
        // θ with mean 4 and model fitted to r = 5 + 2δ − δ²
        s.set_theta(
            &scope.key(MEAN_NAME, "weather-uid", "sunny3"),
            RunningMean::from_parts(10, 4.0).unwrap().to_document(),
        )
        .unwrap();
        let mut model = OnlineLinearModel::new(2, 1e-9).unwrap();
        for i in 0..50 {
            let d = -2.0 + 0.08 * i as f64;
            model.update(5.0 + 2.0 * d - d * d, &[d, d * d]).unwrap();
        }
        s.set_theta(
            &scope.key(DEFAULT_NAME, "weather-uid", "sunny3"),
            model.to_document(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = p
            .decide(&scope, &json!({"weather": "sunny", "userid": 3}), &mut rng)
            .unwrap();
        let goal = out.action["distance"].as_f64().unwrap();
        assert!((goal - 5.0).abs() < 1e-6, "{goal}");
        assert!((out.log_hint.unwrap()["delta_star"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn summary_stores_model_and_mean() {
        let s = store(&[1]);
        let p = policy(json!({}));
        let scope = Scope::new(&s, 1, &NoChildren);
        let ctx = json!({"weather": "rainy", "userid": 7});
        p.summarize(
            &scope,
            &ctx,
            &json!({"type": "swim", "distance": 1.0}),
            &json!({"km": 2.0}),
        )
        .unwrap();
        p.summarize(
            &scope,
            &ctx,
            &json!({"type": "swim", "distance": 3.0}),
            &json!({"km": 4.0}),
        )
        .unwrap();
        let mean = RunningMean::from_document(
            &s.get_theta(&ThetaKey::new(1, "weather-uid", "rainy7").with_name(MEAN_NAME))
                .unwrap()
                .unwrap(),
        )
        .unwrap();
        assert_eq!((mean.n(), mean.mean()), (2, 3.0));
        let model = OnlineLinearModel::from_document(
            &s.get_theta(&ThetaKey::new(1, "weather-uid", "rainy7"))
                .unwrap()
                .unwrap(),
        )
        .unwrap();
        // δ1 = 1 − 0, δ2 = 3 − 2
        let mut expected = OnlineLinearModel::new(2, DEFAULT_RIDGE).unwrap();
        expected.update(2.0, &[1.0, 1.0]).unwrap();
        expected.update(4.0, &[1.0, 1.0]).unwrap();
        assert_eq!(model, expected);
    }

    #[test]
    fn summary_rejects_missing_goal_without_writing() {
        let s = store(&[1]);
        let p = policy(json!({}));
        let scope = Scope::new(&s, 1, &NoChildren);
        let ctx = json!({"weather": "rainy", "userid": 7});
        assert!(matches!(
            p.summarize(&scope, &ctx, &json!({"type": "swim"}), &json!({"km": 2.0})),
            Err(PolicyError::Action(_))
        ));
        assert!(matches!(
            p.summarize(
                &scope,
                &ctx,
                &json!({"distance": 1.0}),
                &json!({"km": null})
            ),
            Err(PolicyError::Reward(_))
        ));
        assert_eq!(s.record_count(), 0);
    }

    /// Streams r = 5 + 2δ − δ² + N(0, 0.25) with exploratory δ through the
    /// policy and compares the online fit to a batch ridge solve of the same
    /// (δ, r) pairs.
    #[test]
    fn learns_vertex_in_stream() {
        let s: ThetaStore = store(&[1]);
        let p = policy(json!({}));
        let scope = Scope::new(&s, 1, &NoChildren);
        let ctx = json!({"weather": "sunny", "userid": 1});
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut pairs = Vec::new();
        let mut mean = 0.0;
        for t in 0..5000 {
            let out = p.decide(&scope, &ctx, &mut rng).unwrap();
            let goal = out.action["distance"].as_f64().unwrap();
            let delta = goal - mean;
            let r = 5.0 + 2.0 * delta - delta * delta + rng.sample(noise);
            p.summarize(&scope, &ctx, &out.action, &json!({"km": r}))
                .unwrap();
            mean += (r - mean) / (t + 1) as f64;
            pairs.push((delta, r));
        }
        let n = pairs.len();
        let x = DMatrix::from_fn(n, 3, |i, j| pairs[i].0.powi(j as i32));
        let y = DVector::from_iterator(n, pairs.iter().map(|p| p.1));
        let gram = x.transpose() * &x + DMatrix::identity(3, 3) * DEFAULT_RIDGE;
        let oracle = gram.lu().solve(&(x.transpose() * y)).unwrap();
        let label = "sunny1";
        let coefs = p.coefs(&scope, label).unwrap();
        for j in 0..3 {
            assert!((coefs[j] - oracle[j]).abs() < 1e-6, "{coefs:?} vs {oracle}");
        }
        let vertex = optimal_delta(&coefs, -5.0, 5.0);
        assert!((vertex - 1.0).abs() < 0.15, "{vertex}");
    }
}
