use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::document::Document;

pub const DEFAULT_NAME: &str = "default";

/// Address of one θ entry.
///
/// `value` may only be omitted when listing every value under a key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ThetaKey {
    pub experiment_id: u64,
    pub name: String,
    pub key: String,
    pub value: Option<String>,
}

impl ThetaKey {
    pub fn new(experiment_id: u64, key: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            experiment_id,
            name: DEFAULT_NAME.to_string(),
            key: key.into(),
            value: Some(value.into()),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub(crate) fn validate(&self) -> Result<(), StoreError> {
        if self.experiment_id == 0 {
            return Err(StoreError::InvalidKey("experiment id must be >= 1".into()));
        }
        if self.name.is_empty() || self.key.is_empty() {
            return Err(StoreError::InvalidKey(
                "name and key must be non-empty".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn value_required(&self) -> Result<&str, StoreError> {
        self.validate()?;
        self.value
            .as_deref()
            .ok_or_else(|| StoreError::InvalidKey("a concrete value is required".into()))
    }
}

/// One stored summary with its address and last write time (ms since epoch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaRecord {
    pub experiment_id: u64,
    pub name: String,
    pub key: String,
    pub value: String,
    pub state: Document,
    pub updated_at: u64,
}

impl ThetaRecord {
    pub fn theta_key(&self) -> ThetaKey {
        ThetaKey {
            experiment_id: self.experiment_id,
            name: self.name.clone(),
            key: self.key.clone(),
            value: Some(self.value.clone()),
        }
    }
}
