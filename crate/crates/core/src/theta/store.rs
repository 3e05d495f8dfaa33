use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use serde_json::{json, Value};

use super::{StoreError, ThetaKey, ThetaRecord};
use crate::document::Document;
use crate::journal::{read_document_file, write_document_file, Journal};
use crate::stats::StatState;

pub const THETA_FORMAT: &str = "theta-v1";
const JOURNAL_STEM: &str = "theta";

/// Source of `updated_at` timestamps, in milliseconds.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    })
}

#[derive(Clone)]
pub struct StoreOptions {
    /// Compact the append log into a snapshot after this many writes.
    pub compact_every: u64,
    /// fsync each append instead of only flushing it to the OS.
    pub sync: bool,
    pub clock: Clock,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self {
            compact_every: 10_000,
            sync: false,
            clock: system_clock(),
        }
    }
}

impl std::fmt::Debug for StoreOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StoreOptions")
            .field("compact_every", &self.compact_every)
            .field("sync", &self.sync)
            .finish_non_exhaustive()
    }
}

/// `(name, key, value)`
type SlotKey = (String, String, String);

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    state: Document,
    updated_at: u64,
}

type Slot = Arc<Mutex<Option<Entry>>>;
type Tables = BTreeMap<u64, BTreeMap<SlotKey, Entry>>;

#[derive(Default)]
struct Namespace {
    slots: RwLock<BTreeMap<SlotKey, Slot>>,
}

impl Namespace {
    fn from_entries(entries: BTreeMap<SlotKey, Entry>) -> Self {
        Self {
            slots: RwLock::new(
                entries
                    .into_iter()
                    .map(|(k, e)| (k, Arc::new(Mutex::new(Some(e)))))
                    .collect(),
            ),
        }
    }

    fn slot(&self, key: &SlotKey) -> Option<Slot> {
        self.slots.read().get(key).cloned()
    }

    fn slot_or_insert(&self, key: SlotKey) -> Slot {
        if let Some(slot) = self.slot(&key) {
            return slot;
        }
        self.slots.write().entry(key).or_default().clone()
    }

    fn entries(&self) -> Vec<(SlotKey, Entry)> {
        self.slots
            .read()
            .iter()
            .filter_map(|(k, slot)| slot.lock().clone().map(|e| (k.clone(), e)))
            .collect()
    }
}

/// Concurrent θ store.
///
/// Every mutation of a single record is serialized on that record's lock;
/// reads take the same short lock and so never observe a torn state.
/// Whole-store operations (reset, snapshot, restore, compaction) run behind
/// an exclusive gate that writers share.
pub struct ThetaStore {
    namespaces: RwLock<HashMap<u64, Arc<Namespace>>>,
    gate: RwLock<()>,
    journal: Option<Journal>,
    writes: AtomicU64,
    compact_every: u64,
    clock: Clock,
}

impl Default for ThetaStore {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl std::fmt::Debug for ThetaStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ThetaStore")
            .field("experiments", &self.namespaces.read().len())
            .field("durable", &self.journal.is_some())
            .finish()
    }
}

impl ThetaStore {
    pub fn in_memory() -> Self {
        Self::with_options(StoreOptions::default())
    }

    /// A volatile store with custom options.
    pub fn with_options(options: StoreOptions) -> Self {
        Self {
            namespaces: RwLock::new(HashMap::new()),
            gate: RwLock::new(()),
            journal: None,
            writes: AtomicU64::new(0),
            compact_every: options.compact_every.max(1),
            clock: options.clock,
        }
    }

    /// Opens a durable store in `dir`, replaying the snapshot and append log.
    pub fn open(dir: &Path, options: StoreOptions) -> Result<Self, StoreError> {
        let (journal, recovered) = Journal::open(dir, JOURNAL_STEM, THETA_FORMAT, options.sync)?;
        let mut tables = Tables::new();
        for doc in &recovered.snapshot {
            apply_snapshot_line(&mut tables, doc)?;
        }
        for doc in &recovered.log {
            apply_log_op(&mut tables, doc)?;
        }
        let store = Self {
            journal: Some(journal),
            ..Self::with_options(options)
        };
        store.install(tables);
        Ok(store)
    }

    fn install(&self, tables: Tables) {
        *self.namespaces.write() = tables
            .into_iter()
            .map(|(id, entries)| (id, Arc::new(Namespace::from_entries(entries))))
            .collect();
    }

    fn namespace(&self, experiment_id: u64) -> Result<Arc<Namespace>, StoreError> {
        self.namespaces
            .read()
            .get(&experiment_id)
            .cloned()
            .ok_or(StoreError::UnknownExperiment(experiment_id))
    }

    fn log(&self, op: Value) -> Result<(), StoreError> {
        if let Some(journal) = &self.journal {
            journal.append(&op)?;
        }
        Ok(())
    }

    /// Creates the θ namespace of an experiment. Idempotent.
    pub fn register(&self, experiment_id: u64) -> Result<(), StoreError> {
        if experiment_id == 0 {
            return Err(StoreError::InvalidKey("experiment id must be >= 1".into()));
        }
        let _gate = self.gate.read();
        let mut namespaces = self.namespaces.write();
        if let std::collections::hash_map::Entry::Vacant(slot) = namespaces.entry(experiment_id) {
            self.log(json!({"op": "register", "experiment_id": experiment_id}))?;
            slot.insert(Arc::default());
        }
        Ok(())
    }

    pub fn contains(&self, experiment_id: u64) -> bool {
        self.namespaces.read().contains_key(&experiment_id)
    }

    pub fn experiment_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.namespaces.read().keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    /// The stored document, or `None` when nothing has been written yet.
    pub fn get_theta(&self, key: &ThetaKey) -> Result<Option<Document>, StoreError> {
        Ok(self.get_record(key)?.map(|r| r.state))
    }

    pub fn get_record(&self, key: &ThetaKey) -> Result<Option<ThetaRecord>, StoreError> {
        let value = key.value_required()?;
        let ns = self.namespace(key.experiment_id)?;
        let slot_key = (key.name.clone(), key.key.clone(), value.to_string());
        let Some(slot) = ns.slot(&slot_key) else {
            return Ok(None);
        };
        let entry = slot.lock().clone();
        Ok(entry.map(|e| record(key.experiment_id, slot_key, e)))
    }

    /// Every value stored under `(name, key)`, keyed by value.
    pub fn get_theta_all(
        &self,
        experiment_id: u64,
        name: &str,
        key: &str,
    ) -> Result<BTreeMap<String, Document>, StoreError> {
        let ns = self.namespace(experiment_id)?;
        let slots = ns.slots.read();
        let start = (name.to_string(), key.to_string(), String::new());
        Ok(slots
            .range(start..)
            .take_while(|((n, k, _), _)| n == name && k == key)
            .filter_map(|((_, _, v), slot)| {
                slot.lock().as_ref().map(|e| (v.clone(), e.state.clone()))
            })
            .collect())
    }

    /// All records of an experiment ordered by `(name, key, value)`.
    pub fn records(&self, experiment_id: u64) -> Result<Vec<ThetaRecord>, StoreError> {
        let ns = self.namespace(experiment_id)?;
        Ok(ns
            .entries()
            .into_iter()
            .map(|(k, e)| record(experiment_id, k, e))
            .collect())
    }

    pub fn record_count(&self) -> usize {
        let namespaces: Vec<_> = self.namespaces.read().values().cloned().collect();
        namespaces.iter().map(|ns| ns.entries().len()).sum()
    }

    /// Upserts one record.
    pub fn set_theta(&self, key: &ThetaKey, state: Document) -> Result<(), StoreError> {
        self.atomic_update::<StoreError, _>(key, |_| Ok(state))
            .map(|_| ())
    }

    /// Read-transform-write of one record with no interleaved writer on the
    /// same key. The transform sees `None` for a missing record. On error the
    /// stored record is left untouched.
    pub fn atomic_update<E, F>(&self, key: &ThetaKey, transform: F) -> Result<Document, E>
    where
        E: From<StoreError>,
        F: FnOnce(Option<&Document>) -> Result<Document, E>,
    {
        let value = key.value_required()?;
        let new_state = {
            let _gate = self.gate.read();
            let ns = self.namespace(key.experiment_id)?;
            let slot_key = (key.name.clone(), key.key.clone(), value.to_string());
            let slot = ns.slot_or_insert(slot_key);
            let mut current = slot.lock();
            let new_state = transform(current.as_ref().map(|e| &e.state))?;
            StatState::from_document(&new_state).map_err(StoreError::from)?;
            let updated_at = (self.clock)();
            self.log(json!({
                "op": "set",
                "experiment_id": key.experiment_id,
                "name": key.name,
                "key": key.key,
                "value": value,
                "state": new_state,
                "updated_at": updated_at,
            }))?;
            *current = Some(Entry {
                state: new_state.clone(),
                updated_at,
            });
            new_state
        };
        self.maybe_compact()?;
        Ok(new_state)
    }

    /// Removes every record of an experiment, keeping its namespace.
    pub fn reset_theta(&self, experiment_id: u64) -> Result<(), StoreError> {
        let _gate = self.gate.write();
        let ns = self.namespace(experiment_id)?;
        self.log(json!({"op": "reset", "experiment_id": experiment_id}))?;
        ns.slots.write().clear();
        Ok(())
    }

    /// Removes the namespace and all its records.
    pub fn drop_experiment(&self, experiment_id: u64) -> Result<(), StoreError> {
        let _gate = self.gate.write();
        self.namespace(experiment_id)?;
        self.log(json!({"op": "drop", "experiment_id": experiment_id}))?;
        self.namespaces.write().remove(&experiment_id);
        Ok(())
    }

    fn snapshot_lines(&self) -> Vec<Document> {
        let mut ids: Vec<(u64, Arc<Namespace>)> = self
            .namespaces
            .read()
            .iter()
            .map(|(id, ns)| (*id, ns.clone()))
            .collect();
        ids.sort_unstable_by_key(|(id, _)| *id);
        let mut lines = Vec::new();
        for (id, ns) in ids {
            lines.push(json!({"type": "namespace", "experiment_id": id}));
            for (k, e) in ns.entries() {
                let mut doc = serde_json::to_value(record(id, k, e)).expect("records serialize");
                doc["type"] = json!("record");
                lines.push(doc);
            }
        }
        lines
    }

    /// Writes a point-in-time copy of the whole store to `path`.
    pub fn snapshot(&self, path: &Path) -> Result<(), StoreError> {
        let _gate = self.gate.write();
        let lines = self.snapshot_lines();
        write_document_file(path, THETA_FORMAT, &lines)?;
        Ok(())
    }

    /// Replaces the store contents with a snapshot file. The file is fully
    /// parsed and validated first; on any defect the store is unchanged.
    pub fn restore(&self, path: &Path) -> Result<(), StoreError> {
        let docs = read_document_file(path, THETA_FORMAT, false)?;
        let mut tables = Tables::new();
        for doc in &docs {
            apply_snapshot_line(&mut tables, doc)?;
        }
        let _gate = self.gate.write();
        self.install(tables);
        if let Some(journal) = &self.journal {
            journal.compact(&self.snapshot_lines())?;
            self.writes.store(0, Ordering::SeqCst);
        }
        Ok(())
    }

    /// Folds the append log into the on-disk snapshot. No-op for volatile stores.
    pub fn compact(&self) -> Result<(), StoreError> {
        let Some(journal) = &self.journal else {
            return Ok(());
        };
        let _gate = self.gate.write();
        journal.compact(&self.snapshot_lines())?;
        self.writes.store(0, Ordering::SeqCst);
        Ok(())
    }

    fn maybe_compact(&self) -> Result<(), StoreError> {
        if self.journal.is_none() {
            return Ok(());
        }
        let writes = self.writes.fetch_add(1, Ordering::SeqCst) + 1;
        if writes >= self.compact_every {
            self.compact()?;
        }
        Ok(())
    }
}

fn record(experiment_id: u64, (name, key, value): SlotKey, entry: Entry) -> ThetaRecord {
    ThetaRecord {
        experiment_id,
        name,
        key,
        value,
        state: entry.state,
        updated_at: entry.updated_at,
    }
}

fn field<'a>(doc: &'a Document, name: &str) -> Result<&'a Value, StoreError> {
    doc.get(name)
        .ok_or_else(|| StoreError::MalformedSnapshot(format!("missing `{name}` in {doc}")))
}

fn experiment_id(doc: &Document) -> Result<u64, StoreError> {
    field(doc, "experiment_id")?
        .as_u64()
        .filter(|id| *id >= 1)
        .ok_or_else(|| StoreError::MalformedSnapshot(format!("bad experiment id in {doc}")))
}

fn parse_record(doc: &Document) -> Result<(u64, SlotKey, Entry), StoreError> {
    let text = |name: &str| -> Result<String, StoreError> {
        field(doc, name)?
            .as_str()
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .ok_or_else(|| StoreError::MalformedSnapshot(format!("bad `{name}` in {doc}")))
    };
    let id = experiment_id(doc)?;
    let slot_key = (text("name")?, text("key")?, text("value")?);
    let state = field(doc, "state")?.clone();
    StatState::from_document(&state)?;
    let updated_at = field(doc, "updated_at")?
        .as_u64()
        .ok_or_else(|| StoreError::MalformedSnapshot(format!("bad timestamp in {doc}")))?;
    Ok((id, slot_key, Entry { state, updated_at }))
}

fn apply_snapshot_line(tables: &mut Tables, doc: &Document) -> Result<(), StoreError> {
    match doc.get("type").and_then(Value::as_str) {
        Some("namespace") => {
            tables.entry(experiment_id(doc)?).or_default();
        }
        Some("record") => {
            let (id, k, e) = parse_record(doc)?;
            let ns = tables.get_mut(&id).ok_or_else(|| {
                StoreError::MalformedSnapshot(format!("record before namespace {id}"))
            })?;
            ns.insert(k, e);
        }
        _ => return Err(StoreError::MalformedSnapshot(format!("unknown line {doc}"))),
    }
    Ok(())
}

fn apply_log_op(tables: &mut Tables, doc: &Document) -> Result<(), StoreError> {
    match doc.get("op").and_then(Value::as_str) {
        Some("register") => {
            tables.entry(experiment_id(doc)?).or_default();
        }
        Some("set") => {
            let (id, k, e) = parse_record(doc)?;
            tables.entry(id).or_default().insert(k, e);
        }
        Some("reset") => {
            if let Some(ns) = tables.get_mut(&experiment_id(doc)?) {
                ns.clear();
            }
        }
        Some("drop") => {
            tables.remove(&experiment_id(doc)?);
        }
        _ => {
            return Err(StoreError::MalformedSnapshot(format!(
                "unknown log op {doc}"
            )))
        }
    }
    Ok(())
}
