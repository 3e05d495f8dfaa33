use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use serde::Deserialize;
use serde_json::{json, Value};

use super::{DecisionOutcome, Policy, PolicyConfig, PolicyError, Scope};
use crate::document::{label_of, Document};

pub(crate) const KIND: &str = "nested";

/// Reserved action field recording which child experiment produced the
/// action. A single id for one level of nesting, an id path for deeper ones.
pub const NESTED_FIELD: &str = "_nested_id";

/// How a nested experiment picks the child that handles a decision.
#[derive(Debug, Clone, PartialEq)]
pub enum Router {
    /// Random split with weights aligned to `nested_ids`.
    Split(Vec<f64>),
    /// Child chosen by a context field value.
    Field {
        field: String,
        routes: BTreeMap<String, u64>,
        default: Option<u64>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Params {
    #[serde(default)]
    router: Option<RouterRepr>,
}

#[derive(Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum RouterRepr {
    Split {
        split: Vec<f64>,
    },
    Field {
        field: String,
        routes: BTreeMap<String, u64>,
        #[serde(default)]
        default: Option<u64>,
    },
}

/// Delegates both steps to child experiments, each in its own θ namespace.
#[derive(Debug, Clone)]
pub struct Nested {
    pub nested_ids: Vec<u64>,
    pub router: Router,
}

impl Nested {
    pub fn from_config(config: &PolicyConfig) -> Result<Self, PolicyError> {
        let ids = &config.nested_ids;
        if ids.is_empty() {
            return Err(PolicyError::Config("nested_ids must not be empty".into()));
        }
        let mut unique = ids.clone();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != ids.len() || unique[0] == 0 {
            return Err(PolicyError::Config(
                "nested_ids must be distinct positive ids".into(),
            ));
        }
        let params: Params = config.parse_params()?;
        let router = match params.router {
            None => Router::Split(vec![1.0; ids.len()]),
            Some(RouterRepr::Split { split }) => {
                if split.len() != ids.len()
                    || split.iter().any(|w| !(w.is_finite() && *w >= 0.0))
                    || split.iter().sum::<f64>() <= 0.0
                {
                    return Err(PolicyError::Config(
                        "split needs one non-negative weight per nested id, not all zero".into(),
                    ));
                }
                Router::Split(split)
            }
            Some(RouterRepr::Field {
                field,
                routes,
                default,
            }) => {
                let targets = routes.values().chain(default.iter());
                if let Some(bad) = targets.into_iter().find(|id| !ids.contains(id)) {
                    return Err(PolicyError::Config(format!(
                        "route target {bad} is not listed in nested_ids"
                    )));
                }
                Router::Field {
                    field,
                    routes,
                    default,
                }
            }
        };
        Ok(Self {
            nested_ids: config.nested_ids.clone(),
            router,
        })
    }

    fn route(&self, context: &Document, rng: &mut dyn RngCore) -> Result<u64, PolicyError> {
        match &self.router {
            Router::Split(weights) => {
                let total: f64 = weights.iter().sum();
                let mut u = rng.gen::<f64>() * total;
                for (id, w) in self.nested_ids.iter().zip(weights) {
                    if u < *w {
                        return Ok(*id);
                    }
                    u -= w;
                }
                // rounding at the top edge
                let last = weights
                    .iter()
                    .rposition(|w| *w > 0.0)
                    .expect("positive weight");
                Ok(self.nested_ids[last])
            }
            Router::Field {
                field,
                routes,
                default,
            } => {
                let value = context.get(field).and_then(label_of);
                value
                    .and_then(|v| routes.get(&v).copied())
                    .or(*default)
                    .ok_or_else(|| PolicyError::Context(format!("no route for `{field}`")))
            }
        }
    }

    fn child(&self, scope: &Scope<'_>, id: u64) -> Result<std::sync::Arc<dyn Policy>, PolicyError> {
        scope
            .children
            .child(id)
            .ok_or(PolicyError::MissingChild(id))
    }
}

/// Prepends `id` to the routing path already present in `action`.
fn push_route(action: &mut Document, id: u64) -> Result<(), PolicyError> {
    let Value::Object(map) = action else {
        return Err(PolicyError::Action(
            "nested child returned a non-object action".into(),
        ));
    };
    let path = match map.remove(NESTED_FIELD) {
        None => json!(id),
        Some(Value::Array(mut rest)) => {
            rest.insert(0, json!(id));
            Value::Array(rest)
        }
        Some(inner) => json!([id, inner]),
    };
    map.insert(NESTED_FIELD.to_string(), path);
    Ok(())
}

/// Splits the first id off the routing path, returning it and the action
/// as the child produced it.
fn pop_route(action: &Document) -> Result<(u64, Document), PolicyError> {
    let bad = || PolicyError::Action(format!("`{NESTED_FIELD}` must hold a nested experiment id"));
    let mut child_action = action.clone();
    let map = child_action.as_object_mut().ok_or_else(bad)?;
    let path = map.remove(NESTED_FIELD).ok_or_else(bad)?;
    let (head, rest) = match path {
        Value::Number(n) => (n.as_u64().ok_or_else(bad)?, None),
        Value::Array(mut ids) if !ids.is_empty() => {
            let head = ids.remove(0).as_u64().ok_or_else(bad)?;
            let rest = match ids.len() {
                0 => None,
                1 => Some(ids.remove(0)),
                _ => Some(Value::Array(ids)),
            };
            (head, rest)
        }
        _ => return Err(bad()),
    };
    if let Some(rest) = rest {
        map.insert(NESTED_FIELD.to_string(), rest);
    }
    Ok((head, child_action))
}

impl Policy for Nested {
    fn kind(&self) -> &'static str {
        KIND
    }

    fn decide(
        &self,
        scope: &Scope<'_>,
        context: &Document,
        rng: &mut dyn RngCore,
    ) -> Result<DecisionOutcome, PolicyError> {
        let id = self.route(context, rng)?;
        let child = self.child(scope, id)?;
        let mut outcome = child.decide(&scope.for_experiment(id), context, rng)?;
        push_route(&mut outcome.action, id)?;
        outcome.log_hint = Some(json!({"nested_id": id, "child": outcome.log_hint}));
        Ok(outcome)
    }

    fn summarize(
        &self,
        scope: &Scope<'_>,
        context: &Document,
        action: &Document,
        reward: &Document,
    ) -> Result<(), PolicyError> {
        let (id, child_action) = pop_route(action)?;
        if !self.nested_ids.contains(&id) {
            return Err(PolicyError::Action(format!(
                "{id} is not a child of this experiment"
            )));
        }
        let child = self.child(scope, id)?;
        child.summarize(&scope.for_experiment(id), context, &child_action, reward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn route_path_round_trip() {
        let child = json!({"type": "run", "distance": 2.0});
        let mut one = child.clone();
        push_route(&mut one, 3).unwrap();
        assert_eq!(one[NESTED_FIELD], json!(3));
        let mut two = one.clone();
        push_route(&mut two, 7).unwrap();
        assert_eq!(two[NESTED_FIELD], json!([7, 3]));
        let mut three = two.clone();
        push_route(&mut three, 9).unwrap();
        assert_eq!(three[NESTED_FIELD], json!([9, 7, 3]));

        let (id, back) = pop_route(&three).unwrap();
        assert_eq!((id, &back), (9, &two));
        let (id, back) = pop_route(&back).unwrap();
        assert_eq!((id, &back), (7, &one));
        let (id, back) = pop_route(&back).unwrap();
        assert_eq!((id, back), (3, child));
    }

    #[test]
    fn missing_or_bad_route_rejected() {
        assert!(pop_route(&json!({"a": 1})).is_err());
        assert!(pop_route(&json!({NESTED_FIELD: "x"})).is_err());
        assert!(pop_route(&json!({NESTED_FIELD: []})).is_err());
        assert!(push_route(&mut json!(5), 1).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = |ids: Vec<u64>, params: Document| {
            Nested::from_config(&PolicyConfig::nested(ids, params))
        };
        assert!(ok(vec![], json!({})).is_err());
        assert!(ok(vec![2, 2], json!({})).is_err());
        assert!(ok(vec![2, 3], json!({"router": {"split": [1.0]}})).is_err());
        assert!(ok(vec![2, 3], json!({"router": {"split": [0.0, 0.0]}})).is_err());
        assert!(ok(
            vec![2, 3],
            json!({"router": {"field": "w", "routes": {"a": 4}}})
        )
        .is_err());
        assert_eq!(
            ok(vec![2, 3], json!({})).unwrap().router,
            Router::Split(vec![1.0, 1.0])
        );
        let field = ok(
            vec![2, 3],
            json!({"router": {"field": "weather", "routes": {"sunny": 2}, "default": 3}}),
        )
        .unwrap();
        assert!(matches!(field.router, Router::Field { .. }));
    }
}
