use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{ContextCatalog, ContextId};
use crate::stream::Label;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AccuracyError {
    #[error("accuracy entry for unknown context {0}")]
    UnknownContext(ContextId),
    #[error("accuracy entry ({context}, {label}): label not in context")]
    LabelNotInContext { context: ContextId, label: Label },
    #[error("accuracy entry ({context}, {label}) = {value} outside [0, 1]")]
    OutOfRange { context: ContextId, label: Label, value: f64 },
    #[error("malformed accuracy file: {0}")]
    Json(String),
}

/// Offline per-(context, label) accuracy `a_{C,l}`, defined only for `l ∈ C`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccuracyTable {
    entries: BTreeMap<(ContextId, Label), f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyEntry {
    pub context: ContextId,
    pub label: Label,
    pub accuracy: f64,
}

#[derive(Serialize, Deserialize)]
struct AccuracyFile {
    entries: Vec<AccuracyEntry>,
}

impl AccuracyTable {
    pub fn from_entries(
        catalog: &ContextCatalog,
        entries: impl IntoIterator<Item = AccuracyEntry>,
    ) -> Result<Self, AccuracyError> {
        let mut table = BTreeMap::new();
        for e in entries {
            let ctx = catalog.get(e.context).ok_or(AccuracyError::UnknownContext(e.context))?;
            if !ctx.labels.contains(&e.label) {
                return Err(AccuracyError::LabelNotInContext { context: e.context, label: e.label });
            }
            if !(0.0..=1.0).contains(&e.accuracy) {
                return Err(AccuracyError::OutOfRange {
                    context: e.context,
                    label: e.label,
                    value: e.accuracy,
                });
            }
            table.insert((e.context, e.label), e.accuracy);
        }
        Ok(Self { entries: table })
    }

    /// The same accuracy for every (context, member) pair.
    pub fn uniform(catalog: &ContextCatalog, accuracy: f64) -> Result<Self, AccuracyError> {
        Self::from_model(catalog, &AccuracyModel { a_max: accuracy, size_slope: 0.0 })
    }

    pub fn from_model(catalog: &ContextCatalog, model: &AccuracyModel) -> Result<Self, AccuracyError> {
        let entries = catalog.contexts.iter().flat_map(|c| {
            let accuracy = model.accuracy_for_size(c.len());
            c.labels.iter().map(move |&label| AccuracyEntry { context: c.id, label, accuracy })
        });
        Self::from_entries(catalog, entries)
    }

    pub fn get(&self, context: ContextId, label: Label) -> Option<f64> {
        self.entries.get(&(context, label)).copied()
    }

    /// `a_{C,l} ≥ τ`; missing entries never qualify.
    pub fn qualifies(&self, context: ContextId, label: Label, tau: f64) -> bool {
        self.get(context, label).is_some_and(|a| a >= tau)
    }

    pub fn entries(&self) -> impl Iterator<Item = AccuracyEntry> + '_ {
        self.entries
            .iter()
            .map(|(&(context, label), &accuracy)| AccuracyEntry { context, label, accuracy })
    }

    pub fn to_json(&self) -> String {
        let file = AccuracyFile { entries: self.entries().collect() };
        serde_json::to_string_pretty(&file).expect("accuracy table serializes")
    }

    pub fn from_json(catalog: &ContextCatalog, text: &str) -> Result<Self, AccuracyError> {
        let file: AccuracyFile =
            serde_json::from_str(text).map_err(|e| AccuracyError::Json(e.to_string()))?;
        Self::from_entries(catalog, file.entries)
    }
}

/// Size-monotone synthetic accuracy: `a = clamp(a_max − size_slope·(|C|−1), 0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyModel {
    pub a_max: f64,
    pub size_slope: f64,
}

impl Default for AccuracyModel {
    fn default() -> Self {
        Self { a_max: 0.9, size_slope: 0.02 }
    }
}

impl AccuracyModel {
    pub fn accuracy_for_size(&self, size: usize) -> f64 {
        (self.a_max - self.size_slope * (size.max(1) - 1) as f64).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Context, Variant};

    fn catalog() -> ContextCatalog {
        ContextCatalog::new(
            3,
            3,
            Variant::GreedyOverlap,
            vec![Context::new(0, [1, 2]), Context::new(1, [1]), Context::new(2, [1, 2, 3])],
        )
    }

    #[test]
    fn synthetic_model_decreases_with_size() {
        let t = AccuracyTable::from_model(&catalog(), &AccuracyModel::default()).unwrap();
        assert_eq!(t.get(1, 1), Some(0.9));
        assert!((t.get(0, 2).unwrap() - 0.88).abs() < 1e-12);
        assert!((t.get(2, 3).unwrap() - 0.86).abs() < 1e-12);
        assert_eq!(t.get(1, 2), None);
        let clamped = AccuracyModel { a_max: 0.1, size_slope: 0.5 };
        assert_eq!(clamped.accuracy_for_size(3), 0.0);
    }

    #[test]
    fn entries_checked_against_catalog() {
        let cat = catalog();
        let bad = AccuracyEntry { context: 1, label: 2, accuracy: 0.5 };
        assert!(matches!(
            AccuracyTable::from_entries(&cat, [bad]),
            Err(AccuracyError::LabelNotInContext { .. })
        ));
        let bad = AccuracyEntry { context: 0, label: 2, accuracy: 1.5 };
        assert!(matches!(AccuracyTable::from_entries(&cat, [bad]), Err(AccuracyError::OutOfRange { .. })));
        let bad = AccuracyEntry { context: 9, label: 2, accuracy: 0.5 };
        assert!(matches!(AccuracyTable::from_entries(&cat, [bad]), Err(AccuracyError::UnknownContext(9))));
    }

    #[test]
    fn json_round_trip() {
        let cat = catalog();
        let t = AccuracyTable::uniform(&cat, 0.75).unwrap();
        assert_eq!(AccuracyTable::from_json(&cat, &t.to_json()).unwrap(), t);
        assert!(t.qualifies(2, 3, 0.75));
        assert!(!t.qualifies(2, 3, 0.76));
    }
}
