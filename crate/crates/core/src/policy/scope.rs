use std::sync::Arc;

use super::{Policy, PolicyError};
use crate::document::Document;
use crate::stats::StatKind;
use crate::theta::{ThetaKey, ThetaStore};

/// Looks up the compiled policies of nested experiments.
pub trait ChildResolver: Send + Sync {
    fn child(&self, experiment_id: u64) -> Option<Arc<dyn Policy>>;
}

/// Resolver for contexts without nested experiments.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoChildren;

impl ChildResolver for NoChildren {
    fn child(&self, _: u64) -> Option<Arc<dyn Policy>> {
        None
    }
}

/// θ namespace of one experiment, as seen by its policy.
#[derive(Clone, Copy)]
pub struct Scope<'a> {
    pub store: &'a ThetaStore,
    pub experiment_id: u64,
    pub children: &'a dyn ChildResolver,
}

impl<'a> Scope<'a> {
    pub fn new(store: &'a ThetaStore, experiment_id: u64, children: &'a dyn ChildResolver) -> Self {
        Self {
            store,
            experiment_id,
            children,
        }
    }

    /// The same store and resolver, re-targeted at another experiment.
    pub fn for_experiment(&self, experiment_id: u64) -> Self {
        Self {
            experiment_id,
            ..*self
        }
    }

    pub fn key(&self, name: &str, key: &str, value: &str) -> ThetaKey {
        ThetaKey::new(self.experiment_id, key, value).with_name(name)
    }

    /// Typed read; `None` when absent.
    pub fn load<S: StatKind>(
        &self,
        name: &str,
        key: &str,
        value: &str,
    ) -> Result<Option<S>, PolicyError> {
        self.store
            .get_theta(&self.key(name, key, value))?
            .map(|doc| S::from_document(&doc))
            .transpose()
            .map_err(PolicyError::from)
    }

    /// Atomically applies `update` to a typed record, starting from `init()`
    /// when absent. Returns whatever `update` returns.
    pub fn fold<S, R>(
        &self,
        name: &str,
        key: &str,
        value: &str,
        init: impl FnOnce() -> Result<S, PolicyError>,
        update: impl FnOnce(&mut S) -> Result<R, PolicyError>,
    ) -> Result<R, PolicyError>
    where
        S: StatKind,
    {
        let mut out = None;
        self.store.atomic_update::<PolicyError, _>(
            &self.key(name, key, value),
            |prev: Option<&Document>| {
                let mut state = match prev {
                    Some(doc) => S::from_document(doc)?,
                    None => init()?,
                };
                out = Some(update(&mut state)?);
                Ok(state.to_document())
            },
        )?;
        Ok(out.expect("update ran"))
    }
}
