//! Policies split into a decision step and a summary step.
//!
//! A [`PolicyConfig`] names a kind from a [`PolicyRegistry`] and carries its
//! parameters. Compiling it yields a [`Policy`] that reads θ through a
//! [`Scope`] when deciding and folds observations into θ when summarizing.

mod epsilon_first;
mod linear_goal;
mod mean_goal;
mod nested;
mod registry;
pub mod sampling;
mod scope;
mod thompson;

pub use epsilon_first::EpsilonFirst;
pub use linear_goal::{optimal_delta, LinearGoal};
pub use mean_goal::MeanGoal;
pub use nested::{Nested, Router, NESTED_FIELD};
pub use registry::{PolicyFactory, PolicyRegistry};
pub use scope::{ChildResolver, NoChildren, Scope};
pub use thompson::ThompsonBernoulli;

use std::fmt::Debug;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::document::Document;
use crate::stats::StatsError;
use crate::theta::StoreError;

/// Declarative policy description, stored verbatim with each experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: String,
    #[serde(default = "crate::document::empty_object")]
    pub params: Document,
    #[serde(default)]
    pub nested_ids: Vec<u64>,
}

impl PolicyConfig {
    pub fn new(kind: impl Into<String>, params: Document) -> Self {
        Self {
            kind: kind.into(),
            params,
            nested_ids: Vec::new(),
        }
    }

    pub fn nested(nested_ids: Vec<u64>, params: Document) -> Self {
        Self {
            kind: nested::KIND.to_string(),
            params,
            nested_ids,
        }
    }

    pub(crate) fn parse_params<T: serde::de::DeserializeOwned>(&self) -> Result<T, PolicyError> {
        let params = if self.params.is_null() {
            crate::document::empty_object()
        } else {
            self.params.clone()
        };
        serde_json::from_value(params)
            .map_err(|e| PolicyError::Config(format!("{} params: {e}", self.kind)))
    }
}

/// The action chosen by a decision step.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionOutcome {
    pub action: Document,
    /// Diagnostics for the interaction log; never sent to the client.
    pub log_hint: Option<Document>,
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid policy config: {0}")]
    Config(String),
    #[error("context rejected: {0}")]
    Context(String),
    #[error("action rejected: {0}")]
    Action(String),
    #[error("reward rejected: {0}")]
    Reward(String),
    #[error("nested experiment {0} does not exist")]
    MissingChild(u64),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// A compiled policy. Implementations hold only validated parameters; all
/// learned state lives in θ.
pub trait Policy: Send + Sync + Debug {
    fn kind(&self) -> &'static str;

    /// Maps the context and current θ to an action. Must not write θ.
    fn decide(
        &self,
        scope: &Scope<'_>,
        context: &Document,
        rng: &mut dyn RngCore,
    ) -> Result<DecisionOutcome, PolicyError>;

    /// Folds one observed interaction into θ.
    fn summarize(
        &self,
        scope: &Scope<'_>,
        context: &Document,
        action: &Document,
        reward: &Document,
    ) -> Result<(), PolicyError>;
}

/// Context fields `weather` and `userid` concatenated, e.g. `"sunny12"`.
pub(crate) fn user_label(
    context: &Document,
    weather_field: &str,
    user_field: &str,
) -> Result<(String, String), PolicyError> {
    let weather = context
        .get(weather_field)
        .and_then(Document::as_str)
        .ok_or_else(|| PolicyError::Context(format!("`{weather_field}` must be a string")))?;
    let user = context
        .get(user_field)
        .and_then(crate::document::label_of)
        .ok_or_else(|| {
            PolicyError::Context(format!("`{user_field}` must be a string or number"))
        })?;
    Ok((weather.to_string(), format!("{weather}{user}")))
}

pub(crate) fn finite_field(
    doc: &Document,
    field: &str,
    err: fn(String) -> PolicyError,
) -> Result<f64, PolicyError> {
    crate::document::number_field(doc, field)
        .filter(|v| v.is_finite())
        .ok_or_else(|| err(format!("`{field}` must be a finite number")))
}

pub(crate) fn validate_arms(arms: &[String]) -> Result<(), PolicyError> {
    if arms.is_empty() {
        return Err(PolicyError::Config("at least one arm is required".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for arm in arms {
        if arm.is_empty() || !seen.insert(arm) {
            return Err(PolicyError::Config(format!(
                "arm labels must be unique and non-empty, got {arm:?}"
            )));
        }
    }
    Ok(())
}

/// The arm label named in an action, checked against the configured arms.
pub(crate) fn action_arm<'a>(
    action: &Document,
    field: &str,
    arms: &'a [String],
) -> Result<&'a str, PolicyError> {
    let label = action
        .get(field)
        .and_then(crate::document::label_of)
        .ok_or_else(|| PolicyError::Action(format!("`{field}` must name an arm")))?;
    arms.iter()
        .find(|a| **a == label)
        .map(String::as_str)
        .ok_or_else(|| PolicyError::Action(format!("unknown arm `{label}`")))
}

/// Click proportions of every configured arm; absent arms count as empty.
pub(crate) fn arm_proportions(
    scope: &Scope<'_>,
    theta_key: &str,
    arms: &[String],
) -> Result<crate::stats::StatList<crate::stats::RunningProportion>, PolicyError> {
    let mut list = crate::stats::StatList::new();
    for arm in arms {
        let state = scope
            .load(crate::theta::DEFAULT_NAME, theta_key, arm)?
            .unwrap_or_default();
        list.insert(arm.clone(), state);
    }
    Ok(list)
}

/// Shared summary step of the arm-based policies: one binary outcome folded
/// into the chosen arm's proportion.
pub(crate) fn fold_arm_outcome(
    scope: &Scope<'_>,
    action_field: &str,
    reward_field: &str,
    arms: &[String],
    action: &Document,
    reward: &Document,
) -> Result<(), PolicyError> {
    let arm = action_arm(action, action_field, arms)?;
    let outcome = finite_field(reward, reward_field, PolicyError::Reward)?;
    if outcome != 0.0 && outcome != 1.0 {
        return Err(PolicyError::Reward(format!(
            "`{reward_field}` must be 0 or 1, got {outcome}"
        )));
    }
    scope.fold(
        crate::theta::DEFAULT_NAME,
        action_field,
        arm,
        || Ok(crate::stats::RunningProportion::new()),
        |p| Ok(p.update(outcome)?),
    )
}
