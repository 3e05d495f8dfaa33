use rand::RngCore;
use serde::Deserialize;
use serde_json::json;

use super::{
    arm_proportions, fold_arm_outcome, validate_arms, DecisionOutcome, Policy, PolicyConfig,
    PolicyError, Scope,
};
use crate::document::Document;

pub(crate) const KIND: &str = "epsilon_first";

/// Classic A/B test: uniform random arms until more than `exploration_n`
/// outcomes have been observed, then always the arm with the best proportion.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonFirst {
    pub arms: Vec<String>,
    #[serde(default = "default_exploration_n")]
    pub exploration_n: u64,
    #[serde(default = "default_reward_field")]
    pub reward_field: String,
    /// Action field carrying the arm label; also the θ key.
    #[serde(default = "default_action_field")]
    pub action_field: String,
}

fn default_exploration_n() -> u64 {
    1000
}

pub(crate) fn default_reward_field() -> String {
    "click".into()
}

pub(crate) fn default_action_field() -> String {
    "version".into()
}

impl EpsilonFirst {
    pub fn from_config(config: &PolicyConfig) -> Result<Self, PolicyError> {
        let policy: Self = config.parse_params()?;
        validate_arms(&policy.arms)?;
        Ok(policy)
    }
}

impl Policy for EpsilonFirst {
    fn kind(&self) -> &'static str {
        KIND
    }

    fn decide(
        &self,
        scope: &Scope<'_>,
        _context: &Document,
        rng: &mut dyn RngCore,
    ) -> Result<DecisionOutcome, PolicyError> {
        let list = arm_proportions(scope, &self.action_field, &self.arms)?;
        let count = list.count();
        // strictly greater: exploration covers exploration_n + 1 decisions from zero
        let (arm, phase) = if count > self.exploration_n {
            (list.max()?, "exploit")
        } else {
            (list.random(rng)?, "explore")
        };
        Ok(DecisionOutcome {
            action: json!({ self.action_field.as_str(): arm }),
            log_hint: Some(json!({"phase": phase, "count": count})),
        })
    }

    fn summarize(
        &self,
        scope: &Scope<'_>,
        _context: &Document,
        action: &Document,
        reward: &Document,
    ) -> Result<(), PolicyError> {
        fold_arm_outcome(
            scope,
            &self.action_field,
            &self.reward_field,
            &self.arms,
            action,
            reward,
        )
    }
}
