use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::ExperimentError;
use crate::document::Document;
use crate::journal::Journal;
use crate::theta::Clock;

pub const LOG_FORMAT: &str = "log-v1";
/// Largest page returned by [`Logbook::page`].
pub const MAX_PAGE: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    Decision,
    Reward,
    Custom,
}

/// One logged call. `t` counts from 1 per experiment without gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub experiment_id: u64,
    pub t: u64,
    pub kind: InteractionKind,
    pub context: Document,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<Document>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<Document>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint: Option<Document>,
    pub logged_at: u64,
}

/// Append-only interaction log, one stream per experiment.
pub struct Logbook {
    streams: RwLock<BTreeMap<u64, Arc<Mutex<Vec<InteractionRecord>>>>>,
    journal: Option<Journal>,
    clock: Clock,
}

impl std::fmt::Debug for Logbook {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Logbook")
            .field("experiments", &self.streams.read().len())
            .finish_non_exhaustive()
    }
}

impl Logbook {
    pub fn in_memory(clock: Clock) -> Self {
        Self {
            streams: RwLock::new(BTreeMap::new()),
            journal: None,
            clock,
        }
    }

    pub fn open(dir: &Path, clock: Clock, sync: bool) -> Result<Self, ExperimentError> {
        let (journal, recovered) = Journal::open(dir, "logs", LOG_FORMAT, sync)?;
        let mut streams: BTreeMap<u64, Vec<InteractionRecord>> = BTreeMap::new();
        for doc in recovered.snapshot.iter().chain(&recovered.log) {
            match doc.get("op").and_then(Value::as_str) {
                Some("append") => {
                    let record: InteractionRecord =
                        serde_json::from_value(doc["record"].clone())
                            .map_err(|e| ExperimentError::Corrupt(e.to_string()))?;
                    let stream = streams.entry(record.experiment_id).or_default();
                    if record.t != stream.len() as u64 + 1 {
                        return Err(ExperimentError::Corrupt(format!(
                            "log sequence gap at experiment {} t={}",
                            record.experiment_id, record.t
                        )));
                    }
                    stream.push(record);
                }
                Some("purge") => {
                    let id = doc["experiment_id"].as_u64().unwrap_or(0);
                    streams.remove(&id);
                }
                _ => return Err(ExperimentError::Corrupt(format!("unknown log line {doc}"))),
            }
        }
        Ok(Self {
            streams: RwLock::new(
                streams
                    .into_iter()
                    .map(|(id, s)| (id, Arc::new(Mutex::new(s))))
                    .collect(),
            ),
            journal: Some(journal),
            clock,
        })
    }

    fn stream(&self, experiment_id: u64) -> Arc<Mutex<Vec<InteractionRecord>>> {
        if let Some(s) = self.streams.read().get(&experiment_id) {
            return s.clone();
        }
        self.streams
            .write()
            .entry(experiment_id)
            .or_default()
            .clone()
    }

    /// Appends a record, assigning its sequence number and timestamp.
    pub fn append(
        &self,
        experiment_id: u64,
        kind: InteractionKind,
        context: Document,
        action: Option<Document>,
        reward: Option<Document>,
        hint: Option<Document>,
    ) -> Result<InteractionRecord, ExperimentError> {
        let stream = self.stream(experiment_id);
        let mut stream = stream.lock();
        let record = InteractionRecord {
            experiment_id,
            t: stream.len() as u64 + 1,
            kind,
            context,
            action,
            reward,
            hint,
            logged_at: (self.clock)(),
        };
        if let Some(journal) = &self.journal {
            journal.append(&json!({"op": "append", "record": record}))?;
        }
        stream.push(record.clone());
        Ok(record)
    }

    /// Newest first: skips `offset` records, returns at most `limit`
    /// (capped at [`MAX_PAGE`]).
    pub fn page(&self, experiment_id: u64, limit: usize, offset: usize) -> Vec<InteractionRecord> {
        let Some(stream) = self.streams.read().get(&experiment_id).cloned() else {
            return Vec::new();
        };
        let stream = stream.lock();
        stream
            .iter()
            .rev()
            .skip(offset)
            .take(limit.min(MAX_PAGE))
            .cloned()
            .collect()
    }

    /// Whole stream in append order.
    pub fn all(&self, experiment_id: u64) -> Vec<InteractionRecord> {
        self.streams
            .read()
            .get(&experiment_id)
            .map(|s| s.lock().clone())
            .unwrap_or_default()
    }

    pub fn len(&self, experiment_id: u64) -> usize {
        self.streams
            .read()
            .get(&experiment_id)
            .map_or(0, |s| s.lock().len())
    }

    pub fn purge(&self, experiment_id: u64) -> Result<(), ExperimentError> {
        let mut streams = self.streams.write();
        if let Some(journal) = &self.journal {
            journal.append(&json!({"op": "purge", "experiment_id": experiment_id}))?;
        }
        streams.remove(&experiment_id);
        Ok(())
    }
}
