use std::collections::BTreeMap;
use std::sync::Arc;

use super::{Compiled, SimError};
use crate::document::Document;
use crate::experiment::{InteractionKind, InteractionRecord};
use crate::policy::{PolicyConfig, PolicyRegistry, Scope};
use crate::theta::{StoreOptions, ThetaRecord, ThetaStore};

/// θ without timestamps: `(experiment_id, name, key, value) → state`.
pub type ThetaState = BTreeMap<(u64, String, String, String), Document>;

pub fn theta_state<'a>(records: impl IntoIterator<Item = &'a ThetaRecord>) -> ThetaState {
    records
        .into_iter()
        .map(|r| {
            (
                (
                    r.experiment_id,
                    r.name.clone(),
                    r.key.clone(),
                    r.value.clone(),
                ),
                r.state.clone(),
            )
        })
        .collect()
}

/// Folds the reward records of a log through `config`'s summary step on a
/// fresh store and returns the resulting θ.
///
/// Records keep their experiment id, so the result compares directly with
/// the live θ. `children` supplies the configs nested experiments refer to.
pub fn replay(
    log: &[InteractionRecord],
    config: &PolicyConfig,
    children: &BTreeMap<u64, PolicyConfig>,
) -> Result<ThetaState, SimError> {
    let policies = PolicyRegistry::builtin();
    let policy = policies.compile(config)?;
    let mut compiled = BTreeMap::new();
    for (id, child) in children {
        compiled.insert(*id, policies.compile(child)?);
    }
    let compiled = Compiled(compiled);
    let store = ThetaStore::with_options(StoreOptions {
        clock: Arc::new(|| 0),
        ..StoreOptions::default()
    });
    for id in children.keys() {
        store.register(*id)?;
    }
    let mut records: Vec<&InteractionRecord> = log
        .iter()
        .filter(|r| r.kind == InteractionKind::Reward)
        .collect();
    records.sort_by_key(|r| (r.experiment_id, r.t));
    for record in records {
        store.register(record.experiment_id)?;
        let scope = Scope::new(&store, record.experiment_id, &compiled);
        let (Some(action), Some(reward)) = (&record.action, &record.reward) else {
            return Err(SimError::Schema(format!(
                "reward record t={} lacks action or reward",
                record.t
            )));
        };
        policy.summarize(&scope, &record.context, action, reward)?;
    }
    let mut out = ThetaState::new();
    for id in store.experiment_ids() {
        out.extend(theta_state(&store.records(id)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::service::{frozen_clock_options, Access, DecisionService, ThetaFilter};
    use rand::{Rng, SeedableRng};
    use serde_json::json;

    #[test]
    fn empty_log_gives_empty_theta() {
        let config = PolicyConfig::new("mean_goal", json!({}));
        assert!(replay(&[], &config, &BTreeMap::new()).unwrap().is_empty());
    }

    #[test]
    fn replay_reproduces_live_theta() {
        let service = DecisionService::in_memory(frozen_clock_options(5));
        let config = PolicyConfig::new("linear_goal", json!({}));
        let e = service.create_experiment("lg", config.clone()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..400 {
            let ctx = json!({"weather": if rng.gen() { "sunny" } else { "rainy" }, "userid": rng.gen_range(0..4)});
            let action = service.get_action(e.id, &e.key, ctx.clone()).unwrap();
            let km: f64 = rng.gen_range(0.0..10.0);
            service
                .set_reward(e.id, &e.key, ctx, action, json!({"km": km}))
                .unwrap();
        }
        let live = theta_state(
            &service
                .theta(e.id, Access::Admin, &ThetaFilter::default())
                .unwrap(),
        );
        let log = service.logbook().all(e.id);
        let first = replay(&log, &config, &BTreeMap::new()).unwrap();
        assert_eq!(first, live);
        assert_eq!(replay(&log, &config, &BTreeMap::new()).unwrap(), first);
    }
}
