use std::collections::BTreeMap;
use std::sync::Arc;

use super::{
    epsilon_first, linear_goal, mean_goal, nested, thompson, EpsilonFirst, LinearGoal, MeanGoal,
    Nested, Policy, PolicyConfig, PolicyError, ThompsonBernoulli,
};

/// Builds a policy from its validated config.
pub type PolicyFactory = fn(&PolicyConfig) -> Result<Arc<dyn Policy>, PolicyError>;

/// Policy kinds known to the service. New kinds are compiled in by
/// registering a factory.
#[derive(Clone)]
pub struct PolicyRegistry {
    factories: BTreeMap<String, PolicyFactory>,
}

impl std::fmt::Debug for PolicyRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl Default for PolicyRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PolicyRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut registry = Self::empty();
        registry.register(epsilon_first::KIND, |c| {
            Ok(Arc::new(EpsilonFirst::from_config(c)?))
        });
        registry.register(thompson::KIND, |c| {
            Ok(Arc::new(ThompsonBernoulli::from_config(c)?))
        });
        registry.register(mean_goal::KIND, |c| Ok(Arc::new(MeanGoal::from_config(c)?)));
        registry.register(linear_goal::KIND, |c| {
            Ok(Arc::new(LinearGoal::from_config(c)?))
        });
        registry.register(nested::KIND, |c| Ok(Arc::new(Nested::from_config(c)?)));
        registry
    }

    pub fn register(&mut self, kind: impl Into<String>, factory: PolicyFactory) {
        self.factories.insert(kind.into(), factory);
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn compile(&self, config: &PolicyConfig) -> Result<Arc<dyn Policy>, PolicyError> {
        let factory = self
            .factories
            .get(&config.kind)
            .ok_or_else(|| PolicyError::Config(format!("unknown policy kind `{}`", config.kind)))?;
        if config.kind != nested::KIND && !config.nested_ids.is_empty() {
            return Err(PolicyError::Config(
                "nested_ids is only valid for nested policies".into(),
            ));
        }
        factory(config)
    }
}
