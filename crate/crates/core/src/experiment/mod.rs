//! Experiment lifecycle, nested-reference validation and the interaction log.

mod graph;
mod logbook;
mod registry;

pub use graph::MAX_NESTING_DEPTH;
pub use logbook::{InteractionKind, InteractionRecord, Logbook, LOG_FORMAT, MAX_PAGE};
pub use registry::{Experiment, ExperimentRegistry, ExperimentSummary, EXPERIMENT_FORMAT};

use thiserror::Error;

use crate::journal::JournalError;
use crate::policy::PolicyError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("experiment {0} not found")]
    NotFound(u64),
    #[error("invalid experiment key")]
    AuthFailed,
    #[error("invalid config: {0}")]
    InvalidConfig(#[from] PolicyError),
    #[error("nested experiment {0} does not exist")]
    MissingNested(u64),
    #[error("nested references form a cycle through experiment {0}")]
    Cycle(u64),
    #[error("nesting deeper than {MAX_NESTING_DEPTH} levels")]
    TooDeep,
    #[error("experiment {id} is nested by {parents:?}")]
    InUse { id: u64, parents: Vec<u64> },
    #[error("experiment name must be non-empty")]
    InvalidName,
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("corrupt experiment journal: {0}")]
    Corrupt(String),
}
