use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::SimError;
use crate::document::{label_of, number_field, Document};
use crate::stats::RunningMean;

/// A synthetic reward-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Environment {
    /// Context-free arms paying 1 with a fixed probability.
    BernoulliArms {
        arms: BTreeMap<String, f64>,
        #[serde(default = "default_action_field")]
        action_field: String,
        #[serde(default = "default_reward_field")]
        reward_field: String,
    },
    GoalSetting(GoalSetting),
}

fn default_action_field() -> String {
    "version".into()
}

fn default_reward_field() -> String {
    "click".into()
}

/// Users respond to a goal through `r = max(0, α + β1·δ + β2·δ² + ε)` with
/// `δ = goal − their mean achieved distance` and `ε ~ N(0, σ²)`.
///
/// The mean is kept per (weather, user) pair as the running mean of what the
/// user actually achieved, starting from 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalSetting {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub sigma: f64,
    #[serde(default = "default_users")]
    pub users: u32,
    #[serde(default = "default_weathers")]
    pub weathers: Vec<String>,
}

fn default_users() -> u32 {
    1
}

fn default_weathers() -> Vec<String> {
    vec!["sunny".into()]
}

impl GoalSetting {
    /// The δ maximizing the expected untruncated response.
    pub fn optimal_delta(&self) -> f64 {
        -self.beta1 / (2.0 * self.beta2)
    }
}

/// Parses the compact command-line forms
/// `bernoulli:0.5,0.6` (arms labelled A, B, ...), `bernoulli:A=0.5,B=0.6`
/// and `goal:alpha=5,beta1=2,beta2=-1,sigma=0.5[,users=N]`.
impl std::str::FromStr for Environment {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        let bad = |msg: String| SimError::InvalidEnvironment(msg);
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| bad(format!("expected `kind:params`, got {s:?}")))?;
        let items: Vec<&str> = rest
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .collect();
        let env = match kind {
            "bernoulli" => {
                let mut arms = BTreeMap::new();
                for (i, item) in items.iter().enumerate() {
                    let (label, p) = match item.split_once('=') {
                        Some((l, p)) => (l.to_string(), p),
                        None if i < 26 => (char::from(b'A' + i as u8).to_string(), *item),
                        None => return Err(bad("at most 26 unlabelled arms".into())),
                    };
                    let p: f64 = p
                        .parse()
                        .map_err(|_| bad(format!("bad probability {p:?}")))?;
                    if arms.insert(label.clone(), p).is_some() {
                        return Err(bad(format!("duplicate arm {label:?}")));
                    }
                }
                Environment::BernoulliArms {
                    arms,
                    action_field: default_action_field(),
                    reward_field: default_reward_field(),
                }
            }
            "goal" => {
                let mut map = serde_json::Map::new();
                for item in items {
                    let (k, v) = item
                        .split_once('=')
                        .ok_or_else(|| bad(format!("expected name=value, got {item:?}")))?;
                    let value = if k == "weathers" {
                        json!(v.split('|').collect::<Vec<_>>())
                    } else {
                        let x: f64 = v.parse().map_err(|_| bad(format!("bad number {v:?}")))?;
                        if k == "users" {
                            json!(x as u64)
                        } else {
                            json!(x)
                        }
                    };
                    map.insert(k.to_string(), value);
                }
                let goal: GoalSetting = serde_json::from_value(Document::Object(map))
                    .map_err(|e| bad(e.to_string()))?;
                Environment::GoalSetting(goal)
            }
            other => return Err(bad(format!("unknown environment kind {other:?}"))),
        };
        env.validate()?;
        Ok(env)
    }
}

impl Environment {
    pub fn bernoulli(arms: &[(&str, f64)]) -> Self {
        Environment::BernoulliArms {
            arms: arms.iter().map(|(l, p)| (l.to_string(), *p)).collect(),
            action_field: default_action_field(),
            reward_field: default_reward_field(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: &str| Err(SimError::InvalidEnvironment(msg.into()));
        match self {
            Environment::BernoulliArms { arms, .. } => {
                if arms.is_empty() {
                    return bad("at least one arm is required");
                }
                if arms.values().any(|p| !(0.0..=1.0).contains(p)) {
                    return bad("arm probabilities must lie in [0, 1]");
                }
            }
            Environment::GoalSetting(g) => {
                if ![g.alpha, g.beta1, g.beta2, g.sigma]
                    .iter()
                    .all(|v| v.is_finite())
                {
                    return bad("goal parameters must be finite");
                }
                if g.beta2 >= 0.0 {
                    return bad("beta2 must be negative");
                }
                if g.sigma < 0.0 {
                    return bad("sigma must be non-negative");
                }
                if g.users == 0 || g.weathers.is_empty() {
                    return bad("need at least one user and one weather");
                }
            }
        }
        Ok(())
    }

    /// Mutable per-replication state.
    pub(crate) fn start(&self) -> EnvState {
        EnvState {
            means: BTreeMap::new(),
        }
    }
}

pub(crate) struct EnvState {
    means: BTreeMap<(usize, u32), RunningMean>,
}

/// What the environment made of one decision.
pub(crate) struct Outcome {
    pub reward_doc: Document,
    pub reward: f64,
    pub arm: String,
    /// Goal minus the user's mean, for goal setting.
    pub delta: Option<f64>,
}

pub(crate) struct Draw {
    pub context: Document,
    slot: Option<(usize, u32)>,
}

impl EnvState {
    pub fn context<R: Rng>(&self, env: &Environment, rng: &mut R) -> Draw {
        match env {
            Environment::BernoulliArms { .. } => Draw {
                context: json!({}),
                slot: None,
            },
            Environment::GoalSetting(g) => {
                let w = rng.gen_range(0..g.weathers.len());
                let u = rng.gen_range(0..g.users);
                Draw {
                    context: json!({"weather": g.weathers[w], "userid": u}),
                    slot: Some((w, u)),
                }
            }
        }
    }

    pub fn respond<R: Rng>(
        &mut self,
        env: &Environment,
        draw: &Draw,
        action: &Document,
        rng: &mut R,
    ) -> Result<Outcome, SimError> {
        let schema = |msg: String| SimError::Schema(msg);
        match env {
            Environment::BernoulliArms {
                arms,
                action_field,
                reward_field,
            } => {
                let arm = action
                    .get(action_field)
                    .and_then(label_of)
                    .ok_or_else(|| schema(format!("action has no `{action_field}` arm label")))?;
                let p = *arms
                    .get(&arm)
                    .ok_or_else(|| schema(format!("environment has no arm {arm:?}")))?;
                let click = u8::from(rng.gen::<f64>() < p);
                Ok(Outcome {
                    reward_doc: json!({ reward_field.as_str(): click }),
                    reward: f64::from(click),
                    arm,
                    delta: None,
                })
            }
            Environment::GoalSetting(g) => {
                let goal = number_field(action, "distance")
                    .ok_or_else(|| schema("action has no numeric `distance`".into()))?;
                let arm = action
                    .get("type")
                    .and_then(label_of)
                    .unwrap_or_else(|| "goal".into());
                let slot = draw.slot.expect("goal contexts carry a slot");
                let mean = self.means.entry(slot).or_default();
                let delta = goal - mean.mean();
                let noise: f64 = g.sigma * rng.sample::<f64, _>(StandardNormal);
                let km = (g.alpha + g.beta1 * delta + g.beta2 * delta * delta + noise).max(0.0);
                mean.update(km).map_err(|e| schema(e.to_string()))?;
                Ok(Outcome {
                    reward_doc: json!({ "km": km }),
                    reward: km,
                    arm,
                    delta: Some(delta),
                })
            }
        }
    }
}
