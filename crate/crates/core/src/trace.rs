use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::catalog::{ContextCatalog, ContextId};
use crate::stream::LabelSet;

pub type ContextSet = BTreeSet<ContextId>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyTag {
    Greedy,
    GreedyCopy,
    OraclePerFrame,
    OracleSequence,
}

impl PolicyTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyTag::Greedy => "greedy",
            PolicyTag::GreedyCopy => "greedy_copy",
            PolicyTag::OraclePerFrame => "oracle_per_frame",
            PolicyTag::OracleSequence => "oracle_sequence",
        }
    }
}

impl fmt::Display for PolicyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PolicyTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(PolicyTag::Greedy),
            "greedy_copy" | "copy" => Ok(PolicyTag::GreedyCopy),
            "oracle_per_frame" | "oracle" | "per-frame" => Ok(PolicyTag::OraclePerFrame),
            "oracle_sequence" | "sequence" => Ok(PolicyTag::OracleSequence),
            other => Err(format!("unknown policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub tool_version: String,
    pub policy: PolicyTag,
    pub catalog_hash: String,
    pub tau: f64,
    pub context_copy: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceFrame {
    pub t: usize,
    pub pred: LabelSet,
    pub truth: LabelSet,
    #[serde(rename = "S")]
    pub selected: ContextSet,
    pub changed: bool,
    /// Demanded labels with no qualifying context (best-effort detection only).
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub uncoverable: LabelSet,
}

/// Per-frame active context sets with the label sets that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub header: TraceHeader,
    pub frames: Vec<TraceFrame>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceInvariantError {
    #[error("frame {t}: context {context} not in catalog")]
    UnknownContext { t: usize, context: ContextId },
    #[error("frame {t}: changed flag disagrees with S_t vs S_(t-1)")]
    ChangedFlag { t: usize },
    #[error("frame position {position} has index {t}")]
    Index { position: usize, t: usize },
}

impl SelectionTrace {
    /// Assembles frames, deriving `changed` against the previous set (the
    /// first frame is compared with the empty set).
    pub fn assemble(
        header: TraceHeader,
        rows: impl IntoIterator<Item = (LabelSet, LabelSet, ContextSet, LabelSet)>,
    ) -> Self {
        let mut prev = ContextSet::new();
        let frames = rows
            .into_iter()
            .enumerate()
            .map(|(t, (pred, truth, selected, uncoverable))| {
                let changed = selected != prev;
                prev = selected.clone();
                TraceFrame { t, pred, truth, selected, changed, uncoverable }
            })
            .collect();
        Self { header, frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn selections(&self) -> impl Iterator<Item = &ContextSet> {
        self.frames.iter().map(|f| &f.selected)
    }

    pub fn check_invariants(&self, catalog: &ContextCatalog) -> Result<(), TraceInvariantError> {
        let ids: BTreeSet<ContextId> = catalog.ids().collect();
        let empty = ContextSet::new();
        let mut prev = &empty;
        for (position, f) in self.frames.iter().enumerate() {
            if f.t != position {
                return Err(TraceInvariantError::Index { position, t: f.t });
            }
            if let Some(&context) = f.selected.iter().find(|c| !ids.contains(c)) {
                return Err(TraceInvariantError::UnknownContext { t: f.t, context });
            }
            if f.changed != (&f.selected != prev) {
                return Err(TraceInvariantError::ChangedFlag { t: f.t });
            }
            prev = &f.selected;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// One row per frame; sets are `;`-separated.
    pub fn to_csv(&self) -> String {
        fn join<T: fmt::Display>(it: impl IntoIterator<Item = T>) -> String {
            it.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
        }
        let mut out = String::from("t,pred,truth,S,changed\n");
        for f in &self.frames {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                f.t,
                join(&f.pred),
                join(&f.truth),
                join(&f.selected),
                f.changed
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Context, Variant};

    fn header() -> TraceHeader {
        TraceHeader {
            tool_version: "test".into(),
            policy: PolicyTag::Greedy,
            catalog_hash: "abc".into(),
            tau: 0.5,
            context_copy: false,
            s_max: None,
            switch_weight: None,
            objective: None,
        }
    }

    fn cs(v: &[ContextId]) -> ContextSet {
        v.iter().copied().collect()
    }

    #[test]
    fn changed_flags_derived() {
        let rows = [cs(&[]), cs(&[1]), cs(&[1]), cs(&[0])]
            .into_iter()
            .map(|s| (LabelSet::new(), LabelSet::new(), s, LabelSet::new()));
        let trace = SelectionTrace::assemble(header(), rows);
        let flags: Vec<bool> = trace.frames.iter().map(|f| f.changed).collect();
        assert_eq!(flags, vec![false, true, false, true]);
        let cat = ContextCatalog::new(1, 2, Variant::Basic, vec![Context::new(0, [0]), Context::new(1, [1])]);
        trace.check_invariants(&cat).unwrap();

        let mut broken = trace.clone();
        broken.frames[2].changed = true;
        assert_eq!(broken.check_invariants(&cat), Err(TraceInvariantError::ChangedFlag { t: 2 }));
        let mut broken = trace;
        broken.frames[1].selected.insert(7);
        assert!(matches!(broken.check_invariants(&cat), Err(TraceInvariantError::UnknownContext { .. })));
    }

    #[test]
    fn json_field_names() {
        let trace = SelectionTrace::assemble(
            header(),
            [([1].into(), [1, 2].into(), cs(&[4]), LabelSet::new())],
        );
        let v: serde_json::Value = serde_json::from_str(&trace.to_json()).unwrap();
        let f = &v["frames"][0];
        assert_eq!(f["t"], 0);
        assert_eq!(f["pred"], serde_json::json!([1]));
        assert_eq!(f["truth"], serde_json::json!([1, 2]));
        assert_eq!(f["S"], serde_json::json!([4]));
        assert_eq!(f["changed"], true);
        assert_eq!(v["header"]["policy"], "greedy");
        assert_eq!(SelectionTrace::from_json(&trace.to_json()).unwrap(), trace);
        assert_eq!(trace.to_csv(), "t,pred,truth,S,changed\n0,1,1;2,4,true\n");
    }
}
