//! Schemaless payloads carried through the decision protocol.

use serde_json::{Map, Value};

/// Context, action and reward payloads are plain JSON values.
pub type Document = Value;

/// Canonical single-line form: object keys sorted, shortest round-trip numbers.
///
/// `serde_json` is built without `preserve_order`, so maps are already ordered
/// by key and plain serialization is canonical.
pub fn canonical_string(doc: &Document) -> String {
    serde_json::to_string(doc).expect("a JSON value always serializes")
}

/// Renders a scalar as a label: strings verbatim, integers without a fraction,
/// booleans as `true`/`false`. Returns `None` for anything else.
pub fn label_of(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Some(i.to_string())
            } else if let Some(u) = n.as_u64() {
                Some(u.to_string())
            } else {
                n.as_f64().filter(|f| f.is_finite()).map(|f| f.to_string())
            }
        }
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Numeric field lookup that also accepts booleans as 0/1.
pub fn number_field(doc: &Document, field: &str) -> Option<f64> {
    match doc.get(field)? {
        Value::Number(n) => n.as_f64(),
        Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
        _ => None,
    }
}

pub fn empty_object() -> Document {
    Value::Object(Map::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn labels_render_integers_without_fraction() {
        assert_eq!(label_of(&json!(12)).as_deref(), Some("12"));
        assert_eq!(label_of(&json!("12")).as_deref(), Some("12"));
        assert_eq!(label_of(&json!(1.5)).as_deref(), Some("1.5"));
        assert_eq!(label_of(&json!(null)), None);
        assert_eq!(label_of(&json!({"a": 1})), None);
    }

    #[test]
    fn canonical_form_sorts_keys() {
        let doc = json!({"b": 1, "a": {"d": 2, "c": 3}});
        assert_eq!(canonical_string(&doc), r#"{"a":{"c":3,"d":2},"b":1}"#);
    }
}
