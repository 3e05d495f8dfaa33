use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use subtle::ConstantTimeEq;

use super::{graph, ExperimentError};
use crate::journal::Journal;
use crate::policy::{ChildResolver, Policy, PolicyConfig, PolicyRegistry};
use crate::theta::Clock;

pub const EXPERIMENT_FORMAT: &str = "experiments-v1";
const KEY_BYTES: usize = 5;

/// A registered experiment. The key is only ever shown at creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub id: u64,
    pub key: String,
    pub name: String,
    pub config: PolicyConfig,
    pub created_at: u64,
}

/// Listing view without the key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub id: u64,
    pub name: String,
    pub config: PolicyConfig,
    pub created_at: u64,
}

impl From<&Experiment> for ExperimentSummary {
    fn from(e: &Experiment) -> Self {
        Self {
            id: e.id,
            name: e.name.clone(),
            config: e.config.clone(),
            created_at: e.created_at,
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    experiment: Experiment,
    policy: Arc<dyn Policy>,
}

#[derive(Debug, Default)]
struct State {
    entries: BTreeMap<u64, Entry>,
    next_id: u64,
}

impl State {
    fn edges(&self) -> BTreeMap<u64, Vec<u64>> {
        self.entries
            .iter()
            .map(|(id, e)| (*id, e.experiment.config.nested_ids.clone()))
            .collect()
    }
}

/// Registry of experiments and their compiled policies.
///
/// Creation, update and deletion serialize on one lock; lookups are shared.
pub struct ExperimentRegistry {
    policies: PolicyRegistry,
    state: RwLock<State>,
    journal: Option<Mutex<Journal>>,
    clock: Clock,
}

impl std::fmt::Debug for ExperimentRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExperimentRegistry")
            .field("experiments", &self.state.read().entries.len())
            .finish_non_exhaustive()
    }
}

/// Ten lowercase hex characters from the OS CSPRNG.
pub(crate) fn generate_key() -> String {
    let mut bytes = [0u8; KEY_BYTES];
    OsRng.fill_bytes(&mut bytes);
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl ExperimentRegistry {
    pub fn in_memory(policies: PolicyRegistry, clock: Clock) -> Self {
        Self {
            policies,
            state: RwLock::new(State {
                entries: BTreeMap::new(),
                next_id: 1,
            }),
            journal: None,
            clock,
        }
    }

    /// Opens a durable registry, replaying its journal.
    pub fn open(
        dir: &Path,
        policies: PolicyRegistry,
        clock: Clock,
        sync: bool,
    ) -> Result<Self, ExperimentError> {
        let (journal, recovered) = Journal::open(dir, "experiments", EXPERIMENT_FORMAT, sync)?;
        let mut state = State {
            entries: BTreeMap::new(),
            next_id: 1,
        };
        let corrupt = |doc: &Value| ExperimentError::Corrupt(format!("bad line {doc}"));
        for doc in recovered.snapshot.iter().chain(&recovered.log) {
            match doc.get("op").and_then(Value::as_str) {
                Some("create") => {
                    let experiment: Experiment = serde_json::from_value(doc["experiment"].clone())
                        .map_err(|_| corrupt(doc))?;
                    let policy = policies.compile(&experiment.config)?;
                    state.next_id = state.next_id.max(experiment.id + 1);
                    state
                        .entries
                        .insert(experiment.id, Entry { experiment, policy });
                }
                Some("update") => {
                    let id = doc["id"].as_u64().ok_or_else(|| corrupt(doc))?;
                    let config: PolicyConfig =
                        serde_json::from_value(doc["config"].clone()).map_err(|_| corrupt(doc))?;
                    let policy = policies.compile(&config)?;
                    let entry = state.entries.get_mut(&id).ok_or_else(|| corrupt(doc))?;
                    entry.experiment.config = config;
                    entry.policy = policy;
                }
                Some("delete") => {
                    let id = doc["id"].as_u64().ok_or_else(|| corrupt(doc))?;
                    state.entries.remove(&id);
                }
                Some("next_id") => {
                    let next = doc["next_id"].as_u64().ok_or_else(|| corrupt(doc))?;
                    state.next_id = state.next_id.max(next);
                }
                _ => return Err(corrupt(doc)),
            }
        }
        Ok(Self {
            policies,
            state: RwLock::new(state),
            journal: Some(Mutex::new(journal)),
            clock,
        })
    }

    fn log(&self, op: Value) -> Result<(), ExperimentError> {
        if let Some(journal) = &self.journal {
            journal.lock().append(&op)?;
        }
        Ok(())
    }

    pub fn policies(&self) -> &PolicyRegistry {
        &self.policies
    }

    /// Validates and registers a new experiment, issuing its id and key.
    pub fn create(&self, name: &str, config: PolicyConfig) -> Result<Experiment, ExperimentError> {
        if name.trim().is_empty() {
            return Err(ExperimentError::InvalidName);
        }
        let policy = self.policies.compile(&config)?;
        let mut state = self.state.write();
        let id = state.next_id;
        let mut edges = state.edges();
        edges.insert(id, config.nested_ids.clone());
        graph::validate(&edges)?;
        let experiment = Experiment {
            id,
            key: generate_key(),
            name: name.to_string(),
            config,
            created_at: (self.clock)(),
        };
        self.log(json!({"op": "create", "experiment": experiment}))?;
        state.next_id = id + 1;
        state.entries.insert(
            id,
            Entry {
                experiment: experiment.clone(),
                policy,
            },
        );
        Ok(experiment)
    }

    /// Replaces an experiment's policy config, re-validating the nesting graph.
    pub fn update(
        &self,
        id: u64,
        config: PolicyConfig,
    ) -> Result<ExperimentSummary, ExperimentError> {
        let policy = self.policies.compile(&config)?;
        let mut state = self.state.write();
        if !state.entries.contains_key(&id) {
            return Err(ExperimentError::NotFound(id));
        }
        let mut edges = state.edges();
        edges.insert(id, config.nested_ids.clone());
        graph::validate(&edges)?;
        self.log(json!({"op": "update", "id": id, "config": config}))?;
        let entry = state.entries.get_mut(&id).expect("checked above");
        entry.experiment.config = config;
        entry.policy = policy;
        Ok(ExperimentSummary::from(&entry.experiment))
    }

    /// Removes an experiment unless another experiment nests it.
    pub fn delete(&self, id: u64) -> Result<(), ExperimentError> {
        let mut state = self.state.write();
        if !state.entries.contains_key(&id) {
            return Err(ExperimentError::NotFound(id));
        }
        let parents: Vec<u64> = state
            .entries
            .values()
            .filter(|e| e.experiment.config.nested_ids.contains(&id))
            .map(|e| e.experiment.id)
            .collect();
        if !parents.is_empty() {
            return Err(ExperimentError::InUse { id, parents });
        }
        self.log(json!({"op": "delete", "id": id}))?;
        state.entries.remove(&id);
        Ok(())
    }

    /// Checks the key in constant time. Unknown ids still pay for a comparison.
    pub fn authenticate(
        &self,
        id: u64,
        key: &str,
    ) -> Result<(ExperimentSummary, Arc<dyn Policy>), ExperimentError> {
        let state = self.state.read();
        match state.entries.get(&id) {
            Some(entry) => {
                if bool::from(entry.experiment.key.as_bytes().ct_eq(key.as_bytes())) {
                    Ok((
                        ExperimentSummary::from(&entry.experiment),
                        entry.policy.clone(),
                    ))
                } else {
                    Err(ExperimentError::AuthFailed)
                }
            }
            None => {
                let _ = [0u8; 2 * KEY_BYTES].ct_eq(key.as_bytes());
                Err(ExperimentError::NotFound(id))
            }
        }
    }

    pub fn get(&self, id: u64) -> Option<ExperimentSummary> {
        self.state
            .read()
            .entries
            .get(&id)
            .map(|e| ExperimentSummary::from(&e.experiment))
    }

    pub fn policy(&self, id: u64) -> Option<Arc<dyn Policy>> {
        self.state.read().entries.get(&id).map(|e| e.policy.clone())
    }

    /// All experiments ordered by id.
    pub fn list(&self) -> Vec<ExperimentSummary> {
        self.state
            .read()
            .entries
            .values()
            .map(|e| ExperimentSummary::from(&e.experiment))
            .collect()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.state.read().entries.keys().copied().collect()
    }
}

impl ChildResolver for ExperimentRegistry {
    fn child(&self, experiment_id: u64) -> Option<Arc<dyn Policy>> {
        self.policy(experiment_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Instant;

    fn registry() -> ExperimentRegistry {
        ExperimentRegistry::in_memory(PolicyRegistry::builtin(), Arc::new(|| 1))
    }

    fn mean_goal() -> PolicyConfig {
        PolicyConfig::new("mean_goal", json!({}))
    }

    #[test]
    fn create_issues_id_and_hex_key() {
        let r = registry();
        let e = r.create("goals", mean_goal()).unwrap();
        assert_eq!(e.id, 1);
        assert_eq!(e.key.len(), 10);
        assert!(e
            .key
            .chars()
            .all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
        let e2 = r.create("goals", mean_goal()).unwrap();
        assert_eq!(e2.id, 2);
        assert_ne!(e.key, e2.key);
    }

    #[test]
    fn ids_are_never_reused() {
        let r = registry();
        r.create("a", mean_goal()).unwrap();
        r.create("b", mean_goal()).unwrap();
        r.delete(2).unwrap();
        assert_eq!(r.create("c", mean_goal()).unwrap().id, 3);
    }

    #[test]
    fn nested_validation() {
        let r = registry();
        assert!(matches!(
            r.create("n", PolicyConfig::nested(vec![99], json!({}))),
            Err(ExperimentError::MissingNested(99))
        ));
        // the next id would be 1: referencing it is a self-loop
        assert!(matches!(
            r.create("n", PolicyConfig::nested(vec![1], json!({}))),
            Err(ExperimentError::Cycle(1))
        ));
        let a = r.create("a", mean_goal()).unwrap().id;
        let b = r
            .create("b", PolicyConfig::nested(vec![a], json!({})))
            .unwrap()
            .id;
        // closing edge a → b
        assert!(matches!(
            r.update(a, PolicyConfig::nested(vec![b], json!({}))),
            Err(ExperimentError::Cycle(_))
        ));
        assert!(matches!(r.delete(a), Err(ExperimentError::InUse { .. })));
        r.delete(b).unwrap();
        r.delete(a).unwrap();
    }

    #[test]
    fn invalid_config_and_name() {
        let r = registry();
        assert!(matches!(
            r.create("x", PolicyConfig::new("nope", json!({}))),
            Err(ExperimentError::InvalidConfig(_))
        ));
        assert!(matches!(
            r.create("  ", mean_goal()),
            Err(ExperimentError::InvalidName)
        ));
        assert!(r.list().is_empty());
    }

    #[test]
    fn authentication() {
        let r = registry();
        let e = r.create("a", mean_goal()).unwrap();
        assert_eq!(r.authenticate(1, &e.key).unwrap().0.id, 1);
        assert!(matches!(
            r.authenticate(1, "0000000000"),
            Err(ExperimentError::AuthFailed)
        ));
        assert!(matches!(
            r.authenticate(1, ""),
            Err(ExperimentError::AuthFailed)
        ));
        assert!(matches!(
            r.authenticate(5, &e.key),
            Err(ExperimentError::NotFound(5))
        ));
    }

    /// Median batch time of a key mismatching in its first character versus
    /// its last: an early-exit comparison would separate them.
    #[test]
    fn key_comparison_has_no_early_exit_signal() {
        let r = registry();
        let key = r.create("a", mean_goal()).unwrap().key;
        let flip = |i: usize| -> String {
            let mut chars: Vec<char> = key.chars().collect();
            chars[i] = if chars[i] == '0' { '1' } else { '0' };
            chars.into_iter().collect()
        };
        let (first, last) = (flip(0), flip(9));
        let median = |candidate: &str| {
            let mut times: Vec<u128> = (0..61)
                .map(|_| {
                    let start = Instant::now();
                    for _ in 0..2000 {
                        let _ = std::hint::black_box(
                            r.authenticate(1, std::hint::black_box(candidate)),
                        );
                    }
                    start.elapsed().as_nanos()
                })
                .collect();
            times.sort_unstable();
            times[30] as f64
        };
        // interleave to share any drift
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for _ in 0..3 {
            a.push(median(&first));
            b.push(median(&last));
        }
        let ratio = a.iter().sum::<f64>() / b.iter().sum::<f64>();
        assert!((0.67..1.5).contains(&ratio), "timing ratio {ratio}");
    }

    #[test]
    fn durable_registry_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let clock: Clock = Arc::new(|| 1);
        let (first, key) = {
            let r = ExperimentRegistry::open(
                dir.path(),
                PolicyRegistry::builtin(),
                clock.clone(),
                false,
            )
            .unwrap();
            let e = r.create("a", mean_goal()).unwrap();
            r.create("b", mean_goal()).unwrap();
            r.update(2, PolicyConfig::nested(vec![1], json!({})))
                .unwrap();
            r.create("c", mean_goal()).unwrap();
            r.delete(3).unwrap();
            (r.list(), e.key)
        };
        let r =
            ExperimentRegistry::open(dir.path(), PolicyRegistry::builtin(), clock, false).unwrap();
        assert_eq!(r.list(), first);
        assert!(r.authenticate(1, &key).is_ok());
        // the counter survives deletion of the highest id
        assert_eq!(r.create("d", mean_goal()).unwrap().id, 4);
    }
}
