use rand::RngCore;
use serde::Deserialize;
use serde_json::json;

use super::epsilon_first::{default_action_field, default_reward_field};
use super::sampling::sample_beta;
use super::{
    arm_proportions, fold_arm_outcome, validate_arms, DecisionOutcome, Policy, PolicyConfig,
    PolicyError, Scope,
};
use crate::document::Document;

pub(crate) const KIND: &str = "thompson_bernoulli";

/// Thompson sampling for Bernoulli rewards under a uniform Beta(1, 1) prior.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThompsonBernoulli {
    pub arms: Vec<String>,
    #[serde(default = "default_reward_field")]
    pub reward_field: String,
    #[serde(default = "default_action_field")]
    pub action_field: String,
}

impl ThompsonBernoulli {
    pub fn from_config(config: &PolicyConfig) -> Result<Self, PolicyError> {
        let policy: Self = config.parse_params()?;
        validate_arms(&policy.arms)?;
        Ok(policy)
    }
}

impl Policy for ThompsonBernoulli {
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
        let mut best: Option<(&str, f64)> = None;
        let mut draws = serde_json::Map::new();
        // configured order, so the draw sequence does not depend on θ contents
        for arm in &self.arms {
            let p = list.get(arm).expect("every arm is listed");
            let q = sample_beta(p.successes() as f64 + 1.0, p.failures() as f64 + 1.0, rng);
            draws.insert(arm.clone(), json!(q));
            if best.is_none_or(|(_, b)| q > b) {
                best = Some((arm, q));
            }
        }
        let (arm, _) = best.expect("at least one arm");
        Ok(DecisionOutcome {
            action: json!({ self.action_field.as_str(): arm }),
            log_hint: Some(json!({ "draws": draws })),
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
