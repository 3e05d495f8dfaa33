//! The decision service: experiments, θ and logs behind the two protocol
//! calls, independent of any transport.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::rngs::OsRng;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::document::Document;
use crate::experiment::{
    Experiment, ExperimentError, ExperimentRegistry, ExperimentSummary, InteractionKind,
    InteractionRecord, Logbook,
};
use crate::policy::{PolicyConfig, PolicyError, PolicyRegistry, Scope};
use crate::theta::{Clock, StoreError, StoreOptions, ThetaRecord, ThetaStore};

#[derive(Clone, Default)]
pub struct ServiceOptions {
    pub policies: PolicyRegistry,
    pub store: StoreOptions,
    /// Seeds decision randomness; drawn from the OS when `None`.
    pub seed: Option<u64>,
}

impl ServiceOptions {
    pub fn seeded(seed: u64) -> Self {
        Self {
            seed: Some(seed),
            ..Self::default()
        }
    }

    fn clock(&self) -> Clock {
        self.store.clock.clone()
    }
}

/// Which JSON parameter of a call failed to parse or has the wrong shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Context,
    Action,
    Reward,
}

impl Param {
    pub fn name(self) -> &'static str {
        match self {
            Param::Context => "context",
            Param::Action => "action",
            Param::Reward => "reward",
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    /// Unknown experiment or wrong key; deliberately not distinguished.
    #[error("invalid experiment id or key")]
    Unauthorized,
    #[error("experiment {0} not found")]
    NotFound(u64),
    #[error("`{}` must be a JSON object", .0.name())]
    Malformed(Param),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Experiment(ExperimentError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl From<ExperimentError> for ServiceError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::NotFound(id) => ServiceError::NotFound(id),
            other => ServiceError::Experiment(other),
        }
    }
}

impl ServiceError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Unauthorized => "invalid_experiment_or_key",
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Malformed(Param::Context) => "malformed_context",
            ServiceError::Malformed(Param::Action) => "malformed_action",
            ServiceError::Malformed(Param::Reward) => "malformed_reward",
            ServiceError::Policy(e) => policy_code(e),
            ServiceError::Experiment(e) => match e {
                ExperimentError::InvalidConfig(_) | ExperimentError::InvalidName => {
                    "invalid_config"
                }
                ExperimentError::MissingNested(_) => "missing_nested",
                ExperimentError::Cycle(_) | ExperimentError::TooDeep => "nesting_cycle",
                ExperimentError::InUse { .. } => "experiment_in_use",
                ExperimentError::NotFound(_) => "not_found",
                ExperimentError::AuthFailed => "invalid_experiment_or_key",
                ExperimentError::Journal(_) | ExperimentError::Corrupt(_) => "storage",
            },
            ServiceError::Store(_) => "storage",
        }
    }
}

fn policy_code(e: &PolicyError) -> &'static str {
    match e {
        PolicyError::Context(_) => "context_schema",
        PolicyError::Action(_) => "action_schema",
        PolicyError::Reward(_) => "reward_schema",
        PolicyError::Config(_) | PolicyError::MissingChild(_) => "config_invalid",
        PolicyError::Stats(_) => "state_invalid",
        PolicyError::Store(_) => "storage",
    }
}

/// Who is asking for θ or logs.
#[derive(Debug, Clone, Copy)]
pub enum Access<'a> {
    Key(&'a str),
    /// Caller already presented the admin token.
    Admin,
}

/// Optional filters for a θ dump. `value` is ignored without `key`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ThetaFilter {
    pub name: Option<String>,
    pub key: Option<String>,
    pub value: Option<String>,
}

impl ThetaFilter {
    fn matches(&self, r: &ThetaRecord) -> bool {
        self.name.as_ref().is_none_or(|n| *n == r.name)
            && self.key.as_ref().is_none_or(|k| *k == r.key)
            && self.value.as_ref().is_none_or(|v| *v == r.value)
    }
}

/// Experiments, θ and logs wired together.
pub struct DecisionService {
    store: ThetaStore,
    experiments: ExperimentRegistry,
    logbook: Logbook,
    seed: u64,
    draws: AtomicU64,
}

impl std::fmt::Debug for DecisionService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DecisionService")
            .field("store", &self.store)
            .field("experiments", &self.experiments)
            .finish_non_exhaustive()
    }
}

impl DecisionService {
    pub fn in_memory(options: ServiceOptions) -> Self {
        let clock = options.clock();
        let seed = options.seed.unwrap_or_else(|| OsRng.next_u64());
        Self {
            experiments: ExperimentRegistry::in_memory(options.policies, clock.clone()),
            logbook: Logbook::in_memory(clock),
            store: ThetaStore::with_options(options.store),
            seed,
            draws: AtomicU64::new(0),
        }
    }

    /// Opens (or initializes) a durable service rooted at `dir`.
    pub fn open(dir: &Path, options: ServiceOptions) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(dir).map_err(|source| {
            ExperimentError::Journal(crate::journal::JournalError::Io {
                path: dir.to_path_buf(),
                source,
            })
        })?;
        let clock = options.clock();
        let sync = options.store.sync;
        let seed = options.seed.unwrap_or_else(|| OsRng.next_u64());
        let experiments = ExperimentRegistry::open(dir, options.policies, clock.clone(), sync)?;
        let logbook = Logbook::open(dir, clock, sync)?;
        let store = ThetaStore::open(dir, options.store)?;
        for id in experiments.ids() {
            store.register(id)?;
        }
        Ok(Self {
            store,
            experiments,
            logbook,
            seed,
            draws: AtomicU64::new(0),
        })
    }

    pub fn store(&self) -> &ThetaStore {
        &self.store
    }

    pub fn experiments(&self) -> &ExperimentRegistry {
        &self.experiments
    }

    pub fn logbook(&self) -> &Logbook {
        &self.logbook
    }

    /// A fresh generator per decision: deterministic in call order for a
    /// seeded service, with no lock shared between requests.
    fn rng(&self) -> ChaCha8Rng {
        let n = self.draws.fetch_add(1, Ordering::Relaxed);
        ChaCha8Rng::seed_from_u64(crate::simulator::mix_seed(self.seed, n))
    }

    fn scope(&self, experiment_id: u64) -> Scope<'_> {
        Scope::new(&self.store, experiment_id, &self.experiments)
    }

    fn authenticate(
        &self,
        id: u64,
        key: &str,
    ) -> Result<std::sync::Arc<dyn crate::policy::Policy>, ServiceError> {
        self.experiments
            .authenticate(id, key)
            .map(|(_, policy)| policy)
            .map_err(|_| ServiceError::Unauthorized)
    }

    /// Checks a key (or admin access) against an experiment.
    pub fn authorize(&self, id: u64, access: Access<'_>) -> Result<(), ServiceError> {
        match access {
            Access::Key(key) => self.authenticate(id, key).map(|_| ()),
            Access::Admin if self.experiments.get(id).is_some() => Ok(()),
            Access::Admin => Err(ServiceError::NotFound(id)),
        }
    }

    pub fn create_experiment(
        &self,
        name: &str,
        config: PolicyConfig,
    ) -> Result<Experiment, ServiceError> {
        let experiment = self.experiments.create(name, config)?;
        self.store.register(experiment.id)?;
        Ok(experiment)
    }

    pub fn update_experiment(
        &self,
        id: u64,
        config: PolicyConfig,
    ) -> Result<ExperimentSummary, ServiceError> {
        Ok(self.experiments.update(id, config)?)
    }

    /// Removes the experiment, its θ and its log.
    pub fn delete_experiment(&self, id: u64) -> Result<(), ServiceError> {
        self.experiments.delete(id)?;
        match self.store.drop_experiment(id) {
            Ok(()) | Err(StoreError::UnknownExperiment(_)) => {}
            Err(e) => return Err(e.into()),
        }
        self.logbook.purge(id)?;
        Ok(())
    }

    pub fn list_experiments(&self) -> Vec<ExperimentSummary> {
        self.experiments.list()
    }

    /// The decision call. Logs the decision and returns the action.
    pub fn get_action(
        &self,
        id: u64,
        key: &str,
        context: Document,
    ) -> Result<Document, ServiceError> {
        let policy = self.authenticate(id, key)?;
        if !context.is_object() {
            return Err(ServiceError::Malformed(Param::Context));
        }
        let mut rng = self.rng();
        let outcome = policy.decide(&self.scope(id), &context, &mut rng)?;
        self.logbook.append(
            id,
            InteractionKind::Decision,
            context,
            Some(outcome.action.clone()),
            None,
            outcome.log_hint,
        )?;
        Ok(outcome.action)
    }

    /// The reward call: one observation folded into θ, then logged.
    pub fn set_reward(
        &self,
        id: u64,
        key: &str,
        context: Document,
        action: Document,
        reward: Document,
    ) -> Result<(), ServiceError> {
        let policy = self.authenticate(id, key)?;
        for (doc, param) in [
            (&context, Param::Context),
            (&action, Param::Action),
            (&reward, Param::Reward),
        ] {
            if !doc.is_object() {
                return Err(ServiceError::Malformed(param));
            }
        }
        policy.summarize(&self.scope(id), &context, &action, &reward)?;
        self.logbook.append(
            id,
            InteractionKind::Reward,
            context,
            Some(action),
            Some(reward),
            None,
        )?;
        Ok(())
    }

    /// Free-form log entry.
    pub fn log_data(
        &self,
        id: u64,
        key: &str,
        data: Document,
    ) -> Result<InteractionRecord, ServiceError> {
        self.authenticate(id, key)?;
        Ok(self
            .logbook
            .append(id, InteractionKind::Custom, data, None, None, None)?)
    }

    /// θ records of one experiment ordered by `(name, key, value)`.
    pub fn theta(
        &self,
        id: u64,
        access: Access<'_>,
        filter: &ThetaFilter,
    ) -> Result<Vec<ThetaRecord>, ServiceError> {
        self.authorize(id, access)?;
        let records = match self.store.records(id) {
            Ok(records) => records,
            Err(StoreError::UnknownExperiment(_)) => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(records.into_iter().filter(|r| filter.matches(r)).collect())
    }

    /// A page of the log, newest first.
    pub fn logs(
        &self,
        id: u64,
        access: Access<'_>,
        limit: usize,
        offset: usize,
    ) -> Result<Vec<InteractionRecord>, ServiceError> {
        self.authorize(id, access)?;
        Ok(self.logbook.page(id, limit, offset))
    }
}

impl Default for DecisionService {
    fn default() -> Self {
        Self::in_memory(ServiceOptions::default())
    }
}

/// Options for a service whose timestamps are all zero, handy for tests
/// that compare θ byte for byte.
pub fn frozen_clock_options(seed: u64) -> ServiceOptions {
    let mut options = ServiceOptions::seeded(seed);
    options.store.clock = std::sync::Arc::new(|| 0);
    options
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn service() -> (DecisionService, Experiment) {
        let s = DecisionService::in_memory(ServiceOptions::seeded(1));
        let e = s
            .create_experiment("runsmart", PolicyConfig::new("mean_goal", json!({})))
            .unwrap();
        (s, e)
    }

    #[test]
    fn runsmart_round_trip() {
        let (s, e) = service();
        let ctx = json!({"weather": "sunny", "userid": 12});
        assert_eq!(
            s.get_action(e.id, &e.key, ctx.clone()).unwrap(),
            json!({"type": "run", "distance": 1.0})
        );
        s.set_reward(
            e.id,
            &e.key,
            ctx.clone(),
            json!({"type": "run", "distance": 6}),
            json!({"km": 8}),
        )
        .unwrap();
        assert_eq!(
            s.get_action(e.id, &e.key, ctx).unwrap(),
            json!({"type": "run", "distance": 8.8})
        );
        let log = s.logs(e.id, Access::Key(&e.key), 10, 0).unwrap();
        let kinds: Vec<_> = log.iter().map(|r| r.kind).collect();
        assert_eq!(
            kinds,
            vec![
                InteractionKind::Decision,
                InteractionKind::Reward,
                InteractionKind::Decision
            ]
        );
    }

    #[test]
    fn auth_failures_are_indistinguishable() {
        let (s, e) = service();
        let wrong = s.get_action(e.id, "0000000000", json!({})).unwrap_err();
        let unknown = s.get_action(99, &e.key, json!({})).unwrap_err();
        assert_eq!(wrong.code(), unknown.code());
        assert_eq!(wrong.to_string(), unknown.to_string());
    }

    #[test]
    fn malformed_parameters_name_themselves() {
        let (s, e) = service();
        let ctx = json!({"weather": "sunny", "userid": 12});
        let err = s.get_action(e.id, &e.key, json!([1])).unwrap_err();
        assert_eq!(err.code(), "malformed_context");
        let err = s
            .set_reward(e.id, &e.key, ctx.clone(), json!({}), json!(null))
            .unwrap_err();
        assert_eq!(err.code(), "malformed_reward");
        let err = s
            .get_action(e.id, &e.key, json!({"weather": 3}))
            .unwrap_err();
        assert_eq!(err.code(), "context_schema");
        // nothing logged for rejected calls
        assert_eq!(s.logbook().len(e.id), 0);
    }

    #[test]
    fn decisions_never_write_theta() {
        let (s, e) = service();
        for u in 0..20 {
            s.get_action(e.id, &e.key, json!({"weather": "rainy", "userid": u}))
                .unwrap();
        }
        assert!(s
            .theta(e.id, Access::Admin, &ThetaFilter::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn theta_filter_and_delete() {
        let (s, e) = service();
        for (w, u) in [("sunny", 1), ("rainy", 1), ("sunny", 2)] {
            s.set_reward(
                e.id,
                &e.key,
                json!({"weather": w, "userid": u}),
                json!({}),
                json!({"km": 3}),
            )
            .unwrap();
        }
        let filter = ThetaFilter {
            value: Some("sunny2".into()),
            ..ThetaFilter::default()
        };
        let found = s.theta(e.id, Access::Key(&e.key), &filter).unwrap();
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].state, json!({"kind": "mean", "n": 1, "mean": 3.0}));
        s.delete_experiment(e.id).unwrap();
        assert!(matches!(
            s.theta(e.id, Access::Admin, &ThetaFilter::default()),
            Err(ServiceError::NotFound(_))
        ));
        assert_eq!(s.logbook().len(e.id), 0);
        assert!(!s.store().contains(e.id));
    }

    #[test]
    fn durable_service_reopens() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = json!({"weather": "sunny", "userid": 12});
        let key = {
            let s = DecisionService::open(dir.path(), frozen_clock_options(3)).unwrap();
            let e = s
                .create_experiment("a", PolicyConfig::new("mean_goal", json!({})))
                .unwrap();
            s.set_reward(e.id, &e.key, ctx.clone(), json!({}), json!({"km": 8}))
                .unwrap();
            e.key
        };
        let s = DecisionService::open(dir.path(), frozen_clock_options(3)).unwrap();
        assert_eq!(
            s.get_action(1, &key, ctx).unwrap(),
            json!({"type": "run", "distance": 8.8})
        );
        assert_eq!(s.logbook().len(1), 2);
    }
}
