//! Keyed storage for θ, the summarized state of each experiment.
//!
//! Records are addressed by `(experiment, name, key, value)`. The store keeps
//! everything in memory; when opened on a directory it also appends every
//! mutation to a write-ahead log and periodically compacts into a snapshot.

mod key;
mod store;

pub use key::{ThetaKey, ThetaRecord, DEFAULT_NAME};
pub use store::{system_clock, Clock, StoreOptions, ThetaStore, THETA_FORMAT};

use thiserror::Error;

use crate::journal::JournalError;
use crate::stats::StatsError;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown experiment {0}")]
    UnknownExperiment(u64),
    #[error("invalid theta key: {0}")]
    InvalidKey(String),
    #[error("malformed state document: {0}")]
    MalformedState(#[from] StatsError),
    #[error("malformed snapshot: {0}")]
    MalformedSnapshot(String),
    #[error(transparent)]
    Journal(#[from] JournalError),
}
