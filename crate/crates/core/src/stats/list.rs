use std::collections::BTreeMap;

use rand::Rng;

use super::{StatsError, Summary};

/// Labelled summaries of one kind, e.g. one click proportion per arm.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StatList<S> {
    entries: BTreeMap<String, S>,
}

impl<S: Summary> StatList<S> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, label: impl Into<String>, state: S) -> Option<S> {
        self.entries.insert(label.into(), state)
    }

    pub fn get(&self, label: &str) -> Option<&S> {
        self.entries.get(label)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &S)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Total observations over all entries.
    pub fn count(&self) -> u64 {
        self.entries.values().map(Summary::count).sum()
    }

    /// Label with the highest value; ties go to the lexicographically
    /// smallest label.
    pub fn max(&self) -> Result<&str, StatsError> {
        let mut best: Option<(&str, f64)> = None;
        for (label, state) in &self.entries {
            let v = state.value();
            // strict comparison keeps the earliest (smallest) label on ties
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((label, v));
            }
        }
        best.map(|(l, _)| l).ok_or(StatsError::EmptyList)
    }

    /// Uniformly chosen label.
    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&str, StatsError> {
        if self.entries.is_empty() {
            return Err(StatsError::EmptyList);
        }
        let idx = rng.gen_range(0..self.entries.len());
        Ok(self.entries.keys().nth(idx).expect("index in range"))
    }
}

impl<S, L: Into<String>> FromIterator<(L, S)> for StatList<S> {
    fn from_iter<I: IntoIterator<Item = (L, S)>>(iter: I) -> Self {
        Self {
            entries: iter.into_iter().map(|(l, s)| (l.into(), s)).collect(),
        }
    }
}
