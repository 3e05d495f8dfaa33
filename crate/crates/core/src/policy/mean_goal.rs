use std::collections::BTreeMap;

use rand::RngCore;
use serde::Deserialize;
use serde_json::json;

use super::{finite_field, user_label, DecisionOutcome, Policy, PolicyConfig, PolicyError, Scope};
use crate::document::Document;
use crate::stats::RunningMean;
use crate::theta::DEFAULT_NAME;

pub(crate) const KIND: &str = "mean_goal";

/// Personal goal setting: the goal is the user's running mean distance for
/// the current weather times a fixed uplift; the activity follows the weather.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanGoal {
    #[serde(default = "default_uplift")]
    pub uplift: f64,
    #[serde(default = "default_cold_start_goal")]
    pub cold_start_goal: f64,
    #[serde(default = "default_activity_map")]
    pub activity_map: BTreeMap<String, String>,
    #[serde(default)]
    pub fields: GoalFields,
}

/// Payload field names and θ key shared by the goal-setting policies.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GoalFields {
    pub weather: String,
    pub user: String,
    pub reward: String,
    pub goal: String,
    pub activity: String,
    pub theta_key: String,
}

impl Default for GoalFields {
    fn default() -> Self {
        Self {
            weather: "weather".into(),
            user: "userid".into(),
            reward: "km".into(),
            goal: "distance".into(),
            activity: "type".into(),
            theta_key: "weather-uid".into(),
        }
    }
}

fn default_uplift() -> f64 {
    1.1
}

pub(crate) fn default_cold_start_goal() -> f64 {
    1.0
}

pub(crate) fn default_activity_map() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("sunny".to_string(), "run".to_string()),
        ("rainy".to_string(), "swim".to_string()),
    ])
}

pub(crate) fn validate_goal_params(
    cold_start_goal: f64,
    activity_map: &BTreeMap<String, String>,
) -> Result<(), PolicyError> {
    if !(cold_start_goal.is_finite() && cold_start_goal > 0.0) {
        return Err(PolicyError::Config(
            "cold_start_goal must be positive".into(),
        ));
    }
    if activity_map.is_empty() {
        return Err(PolicyError::Config("activity_map must not be empty".into()));
    }
    Ok(())
}

/// Weather, per-user θ label and activity for a context.
pub(crate) fn resolve_context<'m>(
    context: &Document,
    fields: &GoalFields,
    activity_map: &'m BTreeMap<String, String>,
) -> Result<(String, &'m str), PolicyError> {
    let (weather, label) = user_label(context, &fields.weather, &fields.user)?;
    let activity = activity_map
        .get(&weather)
        .ok_or_else(|| PolicyError::Context(format!("no activity for weather `{weather}`")))?;
    Ok((label, activity))
}

impl MeanGoal {
    pub fn from_config(config: &PolicyConfig) -> Result<Self, PolicyError> {
        let policy: Self = config.parse_params()?;
        if !(policy.uplift.is_finite() && policy.uplift > 0.0) {
            return Err(PolicyError::Config("uplift must be positive".into()));
        }
        validate_goal_params(policy.cold_start_goal, &policy.activity_map)?;
        Ok(policy)
    }
}

impl Policy for MeanGoal {
    fn kind(&self) -> &'static str {
        KIND
    }

    fn decide(
        &self,
        scope: &Scope<'_>,
        context: &Document,
        _rng: &mut dyn RngCore,
    ) -> Result<DecisionOutcome, PolicyError> {
        let (label, activity) = resolve_context(context, &self.fields, &self.activity_map)?;
        let mean: RunningMean = scope
            .load(DEFAULT_NAME, &self.fields.theta_key, &label)?
            .unwrap_or_default();
        let mut distance = mean.mean() * self.uplift;
        if distance == 0.0 {
            distance = self.cold_start_goal;
        }
        Ok(DecisionOutcome {
            action: json!({
                self.fields.activity.as_str(): activity,
                self.fields.goal.as_str(): distance,
            }),
            log_hint: Some(json!({"label": label, "n": mean.n(), "mean": mean.mean()})),
        })
    }

    fn summarize(
        &self,
        scope: &Scope<'_>,
        context: &Document,
        _action: &Document,
        reward: &Document,
    ) -> Result<(), PolicyError> {
        let (_, label) = user_label(context, &self.fields.weather, &self.fields.user)?;
        let km = finite_field(reward, &self.fields.reward, PolicyError::Reward)?;
        scope.fold(
            DEFAULT_NAME,
            &self.fields.theta_key,
            &label,
            || Ok(RunningMean::new()),
            |m| Ok(m.update(km)?),
        )
    }
}
