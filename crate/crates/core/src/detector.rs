//! Runtime context detection.
//!
//! For each frame the detector keeps the previous selection when the predicted
//! labels did not change, optionally reuses it when it still covers the new
//! labels at threshold (context copy), and otherwise runs a greedy pass over
//! the catalog in order of increasing context size, taking every context that
//! supplies at least one still-uncovered label at accuracy `≥ τ`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accuracy::AccuracyTable;
use crate::catalog::{Context, ContextCatalog, ContextId};
use crate::stream::{Label, LabelSet, LabelStream};
use crate::trace::{ContextSet, PolicyTag, SelectionTrace, TraceHeader};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncoverablePolicy {
    Error,
    #[default]
    BestEffort,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub tau: f64,
    pub context_copy: bool,
    #[serde(default)]
    pub uncoverable_policy: UncoverablePolicy,
}

impl DetectorConfig {
    pub fn new(tau: f64, context_copy: bool) -> Result<Self, DetectError> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(DetectError::InvalidConfig(format!("tau {tau} outside [0, 1]")));
        }
        Ok(Self { tau, context_copy, uncoverable_policy: UncoverablePolicy::BestEffort })
    }

    pub fn with_policy(mut self, policy: UncoverablePolicy) -> Self {
        self.uncoverable_policy = policy;
        self
    }

    pub fn policy_tag(&self) -> PolicyTag {
        if self.context_copy {
            PolicyTag::GreedyCopy
        } else {
            PolicyTag::Greedy
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectError {
    #[error("labels {labels:?} have no context with accuracy at or above tau")]
    Uncoverable { labels: Vec<Label> },
    #[error("previous selection references unknown context {0}")]
    UnknownContext(ContextId),
    #[error("invalid detector configuration: {0}")]
    InvalidConfig(String),
    #[error("streams disagree: {0}")]
    StreamMismatch(String),
    #[error("frame {t}: {source}")]
    AtFrame {
        t: usize,
        #[source]
        source: Box<DetectError>,
    },
}

/// Which branch of the detector produced a selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionPath {
    Unchanged,
    Copied,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Detection {
    pub selected: ContextSet,
    pub uncoverable: LabelSet,
    pub path: DetectionPath,
}

/// Catalog, accuracy table and configuration, with contexts pre-sorted by
/// `(size, id)` for the greedy pass.
pub struct Detector<'a> {
    catalog: &'a ContextCatalog,
    accuracy: &'a AccuracyTable,
    config: DetectorConfig,
    order: Vec<&'a Context>,
}

impl<'a> Detector<'a> {
    pub fn new(catalog: &'a ContextCatalog, accuracy: &'a AccuracyTable, config: DetectorConfig) -> Self {
        let mut order: Vec<&Context> = catalog.contexts.iter().collect();
        order.sort_by_key(|c| (c.len(), c.id));
        Self { catalog, accuracy, config, order }
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    /// Labels in `labels` that no catalog context serves at threshold.
    pub fn uncoverable(&self, labels: &LabelSet) -> LabelSet {
        uncoverable_labels(labels, self.catalog, self.accuracy, self.config.tau)
    }

    pub fn detect(
        &self,
        current: &LabelSet,
        previous: &LabelSet,
        prev_selected: &ContextSet,
    ) -> Result<Detection, DetectError> {
        if let Some(&id) = prev_selected.iter().find(|&&id| self.catalog.get(id).is_none()) {
            return Err(DetectError::UnknownContext(id));
        }
        let uncoverable = self.uncoverable(current);
        if current == previous {
            return Ok(Detection {
                selected: prev_selected.clone(),
                uncoverable,
                path: DetectionPath::Unchanged,
            });
        }
        if !uncoverable.is_empty() && self.config.uncoverable_policy == UncoverablePolicy::Error {
            return Err(DetectError::Uncoverable { labels: uncoverable.into_iter().collect() });
        }
        let demand: LabelSet = current.difference(&uncoverable).copied().collect();
        let tau = self.config.tau;
        if self.config.context_copy
            && demand
                .iter()
                .all(|&l| prev_selected.iter().any(|&c| self.accuracy.qualifies(c, l, tau)))
        {
            return Ok(Detection {
                selected: prev_selected.clone(),
                uncoverable,
                path: DetectionPath::Copied,
            });
        }
        let mut remaining = demand;
        let mut selected = ContextSet::new();
        for ctx in &self.order {
            if remaining.is_empty() {
                break;
            }
            let provides: Vec<Label> = ctx
                .labels
                .iter()
                .copied()
                .filter(|l| remaining.contains(l) && self.accuracy.qualifies(ctx.id, *l, tau))
                .collect();
            if !provides.is_empty() {
                selected.insert(ctx.id);
                for l in provides {
                    remaining.remove(&l);
                }
            }
        }
        debug_assert!(remaining.is_empty(), "coverable demand left uncovered");
        Ok(Detection { selected, uncoverable, path: DetectionPath::Greedy })
    }
}

pub fn uncoverable_labels(
    labels: &LabelSet,
    catalog: &ContextCatalog,
    accuracy: &AccuracyTable,
    tau: f64,
) -> LabelSet {
    labels
        .iter()
        .copied()
        .filter(|&l| {
            !catalog
                .contexts
                .iter()
                .any(|c| c.labels.contains(&l) && accuracy.qualifies(c.id, l, tau))
        })
        .collect()
}

/// Labels of `labels` not served at threshold by any context in `selected`.
pub fn uncovered_by(
    labels: &LabelSet,
    selected: &ContextSet,
    accuracy: &AccuracyTable,
    tau: f64,
) -> LabelSet {
    labels
        .iter()
        .copied()
        .filter(|&l| !selected.iter().any(|&c| accuracy.qualifies(c, l, tau)))
        .collect()
}

pub fn detect_contexts(
    current: &LabelSet,
    previous: &LabelSet,
    catalog: &ContextCatalog,
    accuracy: &AccuracyTable,
    config: &DetectorConfig,
    prev_selected: &ContextSet,
) -> Result<Detection, DetectError> {
    Detector::new(catalog, accuracy, *config).detect(current, previous, prev_selected)
}

/// Replays `predicted` through the detector; `ground_truth` is carried along
/// for scoring only.
pub fn run_simulation(
    ground_truth: &LabelStream,
    predicted: &LabelStream,
    catalog: &ContextCatalog,
    accuracy: &AccuracyTable,
    config: &DetectorConfig,
) -> Result<SelectionTrace, DetectError> {
    if ground_truth.len() != predicted.len() {
        return Err(DetectError::StreamMismatch(format!(
            "ground truth has {} frames, predictions {}",
            ground_truth.len(),
            predicted.len()
        )));
    }
    if ground_truth.label_count() != predicted.label_count() {
        return Err(DetectError::StreamMismatch(format!(
            "ground truth has K={}, predictions K={}",
            ground_truth.label_count(),
            predicted.label_count()
        )));
    }
    let detector = Detector::new(catalog, accuracy, *config);
    let mut prev_labels = LabelSet::new();
    let mut prev_selected = ContextSet::new();
    let mut rows = Vec::with_capacity(predicted.len());
    for (pred, truth) in predicted.frames().iter().zip(ground_truth.frames()) {
        let d = detector
            .detect(&pred.labels, &prev_labels, &prev_selected)
            .map_err(|e| DetectError::AtFrame { t: pred.index, source: Box::new(e) })?;
        prev_labels = pred.labels.clone();
        prev_selected = d.selected.clone();
        rows.push((pred.labels.clone(), truth.labels.clone(), d.selected, d.uncoverable));
    }
    let header = TraceHeader {
        tool_version: crate::TOOL_VERSION.to_string(),
        policy: config.policy_tag(),
        catalog_hash: catalog.digest(),
        tau: config.tau,
        context_copy: config.context_copy,
        s_max: None,
        switch_weight: None,
        objective: None,
    };
    Ok(SelectionTrace::assemble(header, rows))
}
