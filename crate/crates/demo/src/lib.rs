//! WebAssembly bindings for the demo page in `www/`.
//!
//! Every export takes plain numbers or strings and returns a JSON string,
//! so the page needs nothing beyond `JSON.parse`.

use banditry_core::policy::PolicyConfig;
use banditry_core::service::{frozen_clock_options, DecisionService};
use banditry_core::simulator::{baselines, trace_curves, Environment, Simulation};
use banditry_core::stats::{RunningProportion, StatKind};
use banditry_core::theta::ThetaKey;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn fail(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn js(result: Result<String, String>) -> Result<String, JsError> {
    result.map_err(|e| JsError::new(&e))
}

/// Keeps a single click from freezing the tab.
const MAX_HORIZON: u32 = 100_000;

fn check_horizon(horizon: u32) -> Result<(), String> {
    if (1..=MAX_HORIZON).contains(&horizon) {
        Ok(())
    } else {
        Err(format!("horizon must be between 1 and {MAX_HORIZON}"))
    }
}

fn arms_of(env: &Environment) -> Vec<String> {
    match env {
        Environment::BernoulliArms { arms, .. } => arms.keys().cloned().collect(),
        Environment::GoalSetting(_) => Vec::new(),
    }
}

/// Cumulative reward of `policy` against uniform allocation on Bernoulli
/// arms given as `"0.5,0.6"` or `"A=0.5,B=0.6"`.
///
/// `policy` is `thompson`, `epsilon` (exploring for a tenth of the horizon)
/// or `uniform`.
pub fn bandit_race(arms: &str, policy: &str, horizon: u32, seed: u32) -> Result<String, String> {
    check_horizon(horizon)?;
    let env: Environment = format!("bernoulli:{arms}").parse().map_err(fail)?;
    env.validate().map_err(fail)?;
    let labels = arms_of(&env);
    let names: Vec<&str> = labels.iter().map(String::as_str).collect();
    let config = match policy {
        "thompson" => PolicyConfig::new("thompson_bernoulli", json!({ "arms": names })),
        "epsilon" => PolicyConfig::new(
            "epsilon_first",
            json!({ "arms": names, "exploration_n": (horizon / 10).max(1) }),
        ),
        "uniform" => baselines::uniform(&names),
        other => return Err(format!("unknown policy {other:?}")),
    };
    let run = |config: PolicyConfig| -> Result<Value, String> {
        let trace = Simulation::new(env.clone(), config, horizon.into(), seed.into(), 1)
            .trace(0)
            .map_err(fail)?;
        Ok(trace_curves(&trace))
    };
    let best = match &env {
        Environment::BernoulliArms { arms, .. } => arms.values().copied().fold(0.0, f64::max),
        Environment::GoalSetting(_) => 0.0,
    };
    let out = json!({
        "policy": run(config)?,
        "uniform": run(baselines::uniform(&names))?,
        "best_rate": best,
    });
    Ok(out.to_string())
}

/// Selection frequencies of Thompson sampling over `draws` requests for
/// arms with the observed `(trials, successes)` pairs in `counts`, a JSON
/// object such as `{"A": [100, 40], "B": [20, 10]}`.
pub fn thompson_draws(counts: &str, draws: u32, seed: u32) -> Result<String, String> {
    let counts: std::collections::BTreeMap<String, (u64, u64)> =
        serde_json::from_str(counts).map_err(fail)?;
    check_horizon(draws)?;
    if counts.is_empty() {
        return Err("no arms".into());
    }
    let service = DecisionService::in_memory(frozen_clock_options(seed.into()));
    let arms: Vec<&str> = counts.keys().map(String::as_str).collect();
    let exp = service
        .create_experiment(
            "demo",
            PolicyConfig::new("thompson_bernoulli", json!({ "arms": arms })),
        )
        .map_err(fail)?;
    let mut posterior = serde_json::Map::new();
    for (arm, &(n, s)) in &counts {
        let state = RunningProportion::from_parts(n, s).map_err(fail)?;
        service
            .store()
            .set_theta(
                &ThetaKey::new(exp.id, "version", arm.as_str()),
                state.to_document(),
            )
            .map_err(fail)?;
        // Beta(1 + s, 1 + n − s)
        let (a, b) = (1.0 + s as f64, 1.0 + (n - s) as f64);
        let mean = a / (a + b);
        let sd = (a * b / ((a + b).powi(2) * (a + b + 1.0))).sqrt();
        posterior.insert(
            arm.clone(),
            json!({"alpha": a, "beta": b, "mean": mean, "sd": sd}),
        );
    }
    let mut chosen: std::collections::BTreeMap<String, u32> =
        arms.iter().map(|a| (a.to_string(), 0)).collect();
    for _ in 0..draws {
        let action = service
            .get_action(exp.id, &exp.key, json!({}))
            .map_err(fail)?;
        if let Some(arm) = action["version"].as_str() {
            *chosen.entry(arm.to_string()).or_default() += 1;
        }
    }
    let freq: serde_json::Map<String, Value> = chosen
        .into_iter()
        .map(|(arm, c)| (arm, json!(f64::from(c) / f64::from(draws.max(1)))))
        .collect();
    Ok(json!({"posterior": posterior, "freq": freq}).to_string())
}

/// Learning trace of the linear goal policy in a simulated goal setting
/// environment with response `α + β1·δ + β2·δ² + σ·N(0, 1)`.
pub fn goal_trace(
    alpha: f64,
    beta1: f64,
    beta2: f64,
    sigma: f64,
    horizon: u32,
    seed: u32,
) -> Result<String, String> {
    check_horizon(horizon)?;
    let env: Environment = format!("goal:alpha={alpha},beta1={beta1},beta2={beta2},sigma={sigma}")
        .parse()
        .map_err(fail)?;
    env.validate().map_err(fail)?;
    let optimal = match &env {
        Environment::GoalSetting(goal) => goal.optimal_delta(),
        Environment::BernoulliArms { .. } => unreachable!("parsed as goal setting"),
    };
    let config = PolicyConfig::new("linear_goal", json!({"min_observations": 30}));
    let trace = Simulation::new(env, config, horizon.into(), seed.into(), 1)
        .trace(0)
        .map_err(fail)?;
    let mut curves = trace_curves(&trace);
    curves["optimal_delta"] = json!(optimal);
    Ok(curves.to_string())
}

// JavaScript entry points

#[wasm_bindgen(js_name = banditRace)]
pub fn js_bandit_race(
    arms: &str,
    policy: &str,
    horizon: u32,
    seed: u32,
) -> Result<String, JsError> {
    js(bandit_race(arms, policy, horizon, seed))
}

#[wasm_bindgen(js_name = thompsonDraws)]
pub fn js_thompson_draws(counts: &str, draws: u32, seed: u32) -> Result<String, JsError> {
    js(thompson_draws(counts, draws, seed))
}

#[wasm_bindgen(js_name = goalTrace)]
pub fn js_goal_trace(
    alpha: f64,
    beta1: f64,
    beta2: f64,
    sigma: f64,
    horizon: u32,
    seed: u32,
) -> Result<String, JsError> {
    js(goal_trace(alpha, beta1, beta2, sigma, horizon, seed))
}
