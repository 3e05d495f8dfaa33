use serde::{Deserialize, Serialize};

use super::{OnlineLinearModel, RunningMean, RunningMoments, RunningProportion, StatsError};
use crate::document::Document;

/// Any persistable summary, tagged by `kind` when serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StatState {
    Mean(RunningMean),
    Proportion(RunningProportion),
    Moments(RunningMoments),
    Linear(OnlineLinearModel),
}

const KINDS: [&str; 4] = ["mean", "proportion", "moments", "linear"];

impl StatState {
    pub fn kind(&self) -> &'static str {
        match self {
            StatState::Mean(_) => "mean",
            StatState::Proportion(_) => "proportion",
            StatState::Moments(_) => "moments",
            StatState::Linear(_) => "linear",
        }
    }

    pub fn to_document(&self) -> Document {
        serde_json::to_value(self).expect("statistics always serialize")
    }

    pub fn from_document(doc: &Document) -> Result<Self, StatsError> {
        let kind = doc
            .get("kind")
            .and_then(Document::as_str)
            .ok_or_else(|| StatsError::Malformed("missing `kind` tag".into()))?;
        if !KINDS.contains(&kind) {
            return Err(StatsError::UnknownKind(kind.to_string()));
        }
        let state: StatState = serde_json::from_value(doc.clone())
            .map_err(|e| StatsError::Malformed(e.to_string()))?;
        match &state {
            StatState::Mean(m) => m.validate()?,
            StatState::Proportion(p) => p.validate()?,
            StatState::Moments(m) => m.validate()?,
            StatState::Linear(_) => {}
        }
        Ok(state)
    }
}

/// Typed access to one variant of [`StatState`].
pub trait StatKind: Sized {
    const KIND: &'static str;

    fn from_state(state: StatState) -> Result<Self, StatsError>;

    fn into_state(self) -> StatState;

    fn from_document(doc: &Document) -> Result<Self, StatsError> {
        Self::from_state(StatState::from_document(doc)?)
    }

    fn to_document(self) -> Document {
        self.into_state().to_document()
    }
}

macro_rules! stat_kind {
    ($ty:ty, $variant:ident, $kind:literal) => {
        impl StatKind for $ty {
            const KIND: &'static str = $kind;

            fn from_state(state: StatState) -> Result<Self, StatsError> {
                match state {
                    StatState::$variant(s) => Ok(s),
                    other => Err(StatsError::KindMismatch {
                        expected: $kind,
                        found: other.kind(),
                    }),
                }
            }

            fn into_state(self) -> StatState {
                StatState::$variant(self)
            }
        }
    };
}

stat_kind!(RunningMean, Mean, "mean");
stat_kind!(RunningProportion, Proportion, "proportion");
stat_kind!(RunningMoments, Moments, "moments");
stat_kind!(OnlineLinearModel, Linear, "linear");

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn mean_document_shape() {
        let m = RunningMean::from_parts(2, 6.5).unwrap();
        let doc = m.to_document();
        assert_eq!(doc, json!({"kind": "mean", "n": 2, "mean": 6.5}));
        assert_eq!(RunningMean::from_document(&doc).unwrap(), m);
    }

    #[test]
    fn linear_document_shape() {
        let mut m = OnlineLinearModel::new(1, 0.5).unwrap();
        m.update(3.0, &[2.0]).unwrap();
        let doc = m.clone().to_document();
        assert_eq!(
            doc,
            json!({"kind": "linear", "d": 2, "n": 1, "lambda": 0.5,
                   "A": [[1.5, 2.0], [2.0, 4.5]], "b": [3.0, 6.0]})
        );
        assert_eq!(OnlineLinearModel::from_document(&doc).unwrap(), m);
    }

    #[test]
    fn missing_field_is_malformed() {
        let err = StatState::from_document(&json!({"kind": "mean"})).unwrap_err();
        assert!(matches!(err, StatsError::Malformed(_)), "{err:?}");
    }

    #[test]
    fn unknown_and_missing_kind() {
        assert_eq!(
            StatState::from_document(&json!({"kind": "median", "n": 1})),
            Err(StatsError::UnknownKind("median".into()))
        );
        assert!(matches!(
            StatState::from_document(&json!({"n": 1, "mean": 1.0})),
            Err(StatsError::Malformed(_))
        ));
    }

    #[test]
    fn cross_kind_rejected() {
        let doc = RunningProportion::from_parts(3, 1).unwrap().to_document();
        assert_eq!(
            RunningMean::from_document(&doc),
            Err(StatsError::KindMismatch {
                expected: "mean",
                found: "proportion"
            })
        );
    }

    #[test]
    fn invariant_violations_rejected() {
        let bad = [
            json!({"kind": "proportion", "n": 1, "s": 2}),
            json!({"kind": "mean", "n": 0, "mean": 3.0}),
            json!({"kind": "linear", "d": 2, "n": 0, "lambda": 0.1, "A": [[1.0, 2.0], [0.0, 1.0]], "b": [0.0, 0.0]}),
            json!({"kind": "linear", "d": 2, "n": 0, "lambda": 0.1, "A": [[1.0]], "b": [0.0, 0.0]}),
            json!({"kind": "moments", "n": 2, "mean_x": 0.0, "mean_y": 0.0, "m2_x": -1.0, "m2_y": 0.0, "cross": 0.0}),
        ];
        for doc in bad {
            assert!(StatState::from_document(&doc).is_err(), "{doc}");
        }
    }

    fn arb_state() -> impl Strategy<Value = StatState> {
        let finite = -1e6f64..1e6;
        prop_oneof![
            prop::collection::vec(finite.clone(), 0..50).prop_map(|xs| {
                let mut m = RunningMean::new();
                xs.into_iter().for_each(|x| m.update(x).unwrap());
                StatState::Mean(m)
            }),
            prop::collection::vec(any::<bool>(), 0..50).prop_map(|bs| {
                let mut p = RunningProportion::new();
                bs.into_iter()
                    .for_each(|b| p.update(b as u8 as f64).unwrap());
                StatState::Proportion(p)
            }),
            prop::collection::vec((finite.clone(), finite.clone()), 0..50).prop_map(|ps| {
                let mut m = RunningMoments::new();
                ps.into_iter().for_each(|(x, y)| m.update(x, y).unwrap());
                StatState::Moments(m)
            }),
            (
                0.0f64..1.0,
                prop::collection::vec((finite.clone(), finite.clone(), finite), 0..30)
            )
                .prop_map(|(lambda, rows)| {
                    let mut m = OnlineLinearModel::new(2, lambda).unwrap();
                    rows.into_iter()
                        .for_each(|(y, a, b)| m.update(y, &[a, b]).unwrap());
                    StatState::Linear(m)
                }),
        ]
    }

    proptest! {
        #[test]
        fn document_round_trip_is_identity(state in arb_state()) {
            let doc = state.to_document();
            prop_assert_eq!(StatState::from_document(&doc).unwrap(), state.clone());
            // and through text, as the store persists it
            let text = crate::document::canonical_string(&doc);
            let reparsed: Document = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(StatState::from_document(&reparsed).unwrap(), state);
        }
    }
}
