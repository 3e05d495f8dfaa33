//! In-process simulation: synthetic environments driving real policies
//! through the same θ store and policy code the service uses.

mod env;
mod replay;

pub use env::{Environment, GoalSetting};
pub use replay::{replay, theta_state, ThetaState};

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::document::Document;
use crate::policy::{ChildResolver, Policy, PolicyConfig, PolicyError, PolicyRegistry, Scope};
use crate::theta::{StoreError, StoreOptions, ThetaRecord, ThetaStore};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
    #[error("policy and environment do not fit: {0}")]
    Schema(String),
    #[error("horizon and replications must be at least 1")]
    EmptyRun,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// SplitMix64 finalizer applied to `seed + (index + 1)·φ`, where φ is the
/// 64-bit golden-ratio increment `0x9E3779B97F4A7C15`.
///
/// Replication `r` of a run seeded with `s` uses `mix_seed(s, r)`, so adding
/// replications never changes the earlier ones.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Policies addressable by experiment id inside one simulation.
struct Compiled(BTreeMap<u64, Arc<dyn Policy>>);

impl ChildResolver for Compiled {
    fn child(&self, experiment_id: u64) -> Option<Arc<dyn Policy>> {
        self.0.get(&experiment_id).cloned()
    }
}

/// Commonly used comparison policies, expressed with built-in kinds.
pub mod baselines {
    use serde_json::json;

    use crate::policy::PolicyConfig;

    /// Picks an arm uniformly at random forever.
    pub fn uniform(arms: &[&str]) -> PolicyConfig {
        PolicyConfig::new(
            "epsilon_first",
            json!({"arms": arms, "exploration_n": u64::MAX}),
        )
    }

    /// Always plays `arm`.
    pub fn fixed(arm: &str) -> PolicyConfig {
        PolicyConfig::new("epsilon_first", json!({"arms": [arm], "exploration_n": 0}))
    }
}

/// A complete simulation setup.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub env: Environment,
    pub config: PolicyConfig,
    /// Configs of experiments a nested `config` refers to, by id.
    pub children: BTreeMap<u64, PolicyConfig>,
    pub horizon: u64,
    pub seed: u64,
    pub replications: u32,
    pub policies: PolicyRegistry,
}

/// One simulated step, kept only when tracing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step {
    pub t: u64,
    pub context: Document,
    pub action: Document,
    pub reward: f64,
    pub arm: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hint: Option<Document>,
}

/// Per-step record of one replication plus its final θ.
#[derive(Debug, Clone)]
pub struct Trace {
    pub seed: u64,
    pub total: f64,
    pub steps: Vec<Step>,
    pub theta: Vec<ThetaRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub replication: u32,
    pub seed: u64,
    #[serde(rename = "R")]
    pub total: f64,
    /// Decisions per arm label.
    pub counts: BTreeMap<String, u64>,
}

/// Aggregate outcome of a simulation. Field names are a stable format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub env: Environment,
    pub config: PolicyConfig,
    pub horizon: u64,
    pub replications: u32,
    pub seed: u64,
    #[serde(rename = "mean_R")]
    pub mean_r: f64,
    #[serde(rename = "sd_R")]
    pub sd_r: f64,
    pub per_rep: Vec<ReplicationResult>,
    /// Share of all decisions that went to each arm label.
    pub freq: BTreeMap<String, f64>,
}

impl SimulationReport {
    /// Pretty JSON with sorted keys; byte-identical for identical runs.
    pub fn to_json(&self) -> String {
        let doc = serde_json::to_value(self).expect("reports serialize");
        let mut out = serde_json::to_string_pretty(&doc).expect("documents serialize");
        out.push('\n');
        out
    }

    /// Mean of R(T)/T over replications.
    pub fn mean_rate(&self) -> f64 {
        self.mean_r / self.horizon as f64
    }
}

/// Runs `replications` independent simulations of a policy without nested
/// children.
pub fn run_simulation(
    env: Environment,
    config: PolicyConfig,
    horizon: u64,
    seed: u64,
    replications: u32,
) -> Result<SimulationReport, SimError> {
    Simulation::new(env, config, horizon, seed, replications).run()
}

impl Simulation {
    pub fn new(
        env: Environment,
        config: PolicyConfig,
        horizon: u64,
        seed: u64,
        replications: u32,
    ) -> Self {
        Self {
            env,
            config,
            children: BTreeMap::new(),
            horizon,
            seed,
            replications,
            policies: PolicyRegistry::builtin(),
        }
    }

    pub fn with_children(mut self, children: BTreeMap<u64, PolicyConfig>) -> Self {
        self.children = children;
        self
    }

    /// Id under which the simulated experiment's own θ is kept.
    pub fn root_id(&self) -> u64 {
        self.children.keys().max().map_or(1, |m| m + 1)
    }

    fn compile(&self) -> Result<(Arc<dyn Policy>, Compiled), SimError> {
        self.env.validate()?;
        if self.horizon == 0 || self.replications == 0 {
            return Err(SimError::EmptyRun);
        }
        let mut children = BTreeMap::new();
        for (id, config) in &self.children {
            children.insert(*id, self.policies.compile(config)?);
        }
        for id in &self.config.nested_ids {
            if !children.contains_key(id) {
                return Err(PolicyError::MissingChild(*id).into());
            }
        }
        Ok((self.policies.compile(&self.config)?, Compiled(children)))
    }

    fn replicate(
        &self,
        policy: &dyn Policy,
        children: &Compiled,
        replication: u32,
        trace: bool,
    ) -> Result<(ReplicationResult, Option<Trace>), SimError> {
        let seed = mix_seed(self.seed, u64::from(replication));
        let store = ThetaStore::with_options(StoreOptions {
            clock: Arc::new(|| 0),
            ..StoreOptions::default()
        });
        let root = self.root_id();
        for id in children.0.keys().copied().chain([root]) {
            store.register(id)?;
        }
        let scope = Scope::new(&store, root, children);
        // separate streams so the environment's draws do not depend on how
        // many numbers the policy consumes
        let mut env_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0));
        let mut policy_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1));
        let mut state = self.env.start();
        let mut total = 0.0;
        let mut counts = BTreeMap::new();
        let mut steps = Vec::new();
        for t in 1..=self.horizon {
            let draw = state.context(&self.env, &mut env_rng);
            let outcome = policy.decide(&scope, &draw.context, &mut policy_rng)?;
            let result = state.respond(&self.env, &draw, &outcome.action, &mut env_rng)?;
            policy.summarize(&scope, &draw.context, &outcome.action, &result.reward_doc)?;
            total += result.reward;
            *counts.entry(result.arm.clone()).or_insert(0) += 1;
            if trace {
                steps.push(Step {
                    t,
                    context: draw.context,
                    action: outcome.action,
                    reward: result.reward,
                    arm: result.arm,
                    delta: result.delta,
                    hint: outcome.log_hint,
                });
            }
        }
        let trace = if trace {
            let mut theta = Vec::new();
            for id in store.experiment_ids() {
                theta.extend(store.records(id)?);
            }
            Some(Trace {
                seed,
                total,
                steps,
                theta,
            })
        } else {
            None
        };
        Ok((
            ReplicationResult {
                replication,
                seed,
                total,
                counts,
            },
            trace,
        ))
    }

    /// Runs every replication and aggregates the report.
    pub fn run(&self) -> Result<SimulationReport, SimError> {
        let (policy, children) = self.compile()?;
        let run_one = |r: u32| {
            self.replicate(policy.as_ref(), &children, r, false)
                .map(|(res, _)| res)
        };
        #[cfg(feature = "parallel")]
        let per_rep: Vec<ReplicationResult> = {
            use rayon::prelude::*;
            (0..self.replications)
                .into_par_iter()
                .map(run_one)
                .collect::<Result<_, _>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let per_rep: Vec<ReplicationResult> = (0..self.replications)
            .map(run_one)
            .collect::<Result<_, _>>()?;
        Ok(self.aggregate(per_rep))
    }

    /// Runs a single replication keeping every step.
    pub fn trace(&self, replication: u32) -> Result<Trace, SimError> {
        let (policy, children) = self.compile()?;
        let (_, trace) = self.replicate(policy.as_ref(), &children, replication, true)?;
        Ok(trace.expect("tracing requested"))
    }

    fn aggregate(&self, mut per_rep: Vec<ReplicationResult>) -> SimulationReport {
        per_rep.sort_by_key(|r| r.replication);
        let n = per_rep.len() as f64;
        let mean_r = per_rep.iter().map(|r| r.total).sum::<f64>() / n;
        let sd_r = if per_rep.len() > 1 {
            (per_rep
                .iter()
                .map(|r| (r.total - mean_r).powi(2))
                .sum::<f64>()
                / (n - 1.0))
                .sqrt()
        } else {
            0.0
        };
        let mut totals: BTreeMap<String, u64> = BTreeMap::new();
        for r in &per_rep {
            for (arm, c) in &r.counts {
                *totals.entry(arm.clone()).or_insert(0) += c;
            }
        }
        let decisions = (self.horizon * u64::from(self.replications)) as f64;
        SimulationReport {
            env: self.env.clone(),
            config: self.config.clone(),
            horizon: self.horizon,
            replications: self.replications,
            seed: self.seed,
            mean_r,
            sd_r,
            per_rep,
            freq: totals
                .into_iter()
                .map(|(arm, c)| (arm, c as f64 / decisions))
                .collect(),
        }
    }
}

/// Compact summary of a trace for plotting: cumulative reward and, for goal
/// setting, the running δ and pre-noise δ* per step.
pub fn trace_curves(trace: &Trace) -> Value {
    let mut cumulative = Vec::with_capacity(trace.steps.len());
    let mut acc = 0.0;
    for s in &trace.steps {
        acc += s.reward;
        cumulative.push(acc);
    }
    let delta: Vec<Option<f64>> = trace.steps.iter().map(|s| s.delta).collect();
    let delta_star: Vec<Option<f64>> = trace
        .steps
        .iter()
        .map(|s| {
            s.hint
                .as_ref()
                .and_then(|h| h.get("delta_star"))
                .and_then(Value::as_f64)
        })
        .collect();
    let arms: Vec<&str> = trace.steps.iter().map(|s| s.arm.as_str()).collect();
    json!({"cumulative": cumulative, "delta": delta, "delta_star": delta_star, "arms": arms})
}
