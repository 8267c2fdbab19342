//! Catalog and trace metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accuracy::AccuracyTable;
use crate::catalog::ContextCatalog;
use crate::cooccurrence::CooccurrenceMatrix;
use crate::scalar::Scalar;
use crate::stream::Label;
use crate::trace::{ContextSet, PolicyTag, SelectionTrace};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("IntraCoherence is undefined for an empty catalog")]
    EmptyCatalog,
    #[error("AvgCoverage is undefined for an empty trace")]
    EmptyTrace,
}

/// Mean over contexts of the mean co-occurrence over ordered member pairs.
/// Singleton contexts contribute zero.
pub fn intra_coherence<T: Scalar>(
    catalog: &ContextCatalog,
    matrix: &CooccurrenceMatrix<T>,
) -> Result<T, MetricsError> {
    if catalog.is_empty() {
        return Err(MetricsError::EmptyCatalog);
    }
    let total = catalog.contexts.iter().fold(T::zero(), |acc, c| {
        let n = c.len();
        if n < 2 {
            return acc;
        }
        let mut sum = T::zero();
        for &i in &c.labels {
            for &j in &c.labels {
                if i != j {
                    sum = sum + matrix.get(i, j);
                }
            }
        }
        acc + sum / T::from_count((n * (n - 1)) as u64)
    });
    Ok(total / T::from_count(catalog.len() as u64))
}

/// Mean `|S_t|`.
pub fn avg_coverage(trace: &SelectionTrace) -> Result<f64, MetricsError> {
    if trace.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    let total: usize = trace.selections().map(ContextSet::len).sum();
    Ok(total as f64 / trace.len() as f64)
}

/// Number of frames `t ≥ 2` (1-based) whose selection differs from the previous frame's.
pub fn switch_penalty(trace: &SelectionTrace) -> usize {
    trace.frames.windows(2).filter(|w| w[0].selected != w[1].selected).count()
}

/// `Σ_t |S_t Δ S_(t−1)|` with an empty set before the first frame.
pub fn switch_cost_symdiff(trace: &SelectionTrace) -> usize {
    symdiff_total(trace.selections())
}

fn symdiff_total<'a>(selections: impl IntoIterator<Item = &'a ContextSet>) -> usize {
    let empty = ContextSet::new();
    let mut prev = &empty;
    let mut total = 0;
    for s in selections {
        total += s.symmetric_difference(prev).count();
        prev = s;
    }
    total
}

/// `Σ_t |S_t| + λ·Σ_t |S_t Δ S_(t−1)|`, the quantity the sequence oracle minimizes.
pub fn selection_objective<'a>(
    selections: impl IntoIterator<Item = &'a ContextSet> + Clone,
    switch_weight: f64,
) -> f64 {
    let count: usize = selections.clone().into_iter().map(ContextSet::len).sum();
    count as f64 + switch_weight * symdiff_total(selections) as f64
}

/// `(t, label)` pairs where a demanded label that some context serves at `τ`
/// is not served by the frame's selection. Demand is the trace's `pred` set.
pub fn coverage_violations(
    trace: &SelectionTrace,
    catalog: &ContextCatalog,
    accuracy: &AccuracyTable,
    tau: f64,
) -> Vec<(usize, Label)> {
    let mut out = Vec::new();
    for f in &trace.frames {
        for &l in &f.pred {
            let coverable = catalog.contexts.iter().any(|c| c.labels.contains(&l) && accuracy.qualifies(c.id, l, tau));
            let served = f.selected.iter().any(|&c| {
                catalog.get(c).is_some_and(|ctx| ctx.labels.contains(&l)) && accuracy.qualifies(c, l, tau)
            });
            if coverable && !served {
                out.push((f.t, l));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageScore {
    /// Mean over (frame, ground-truth label) of the best serving accuracy, 0 when unserved.
    pub score: f64,
    pub uncovered_label_frames: usize,
    pub label_frames: usize,
}

/// Accuracy proxy: each ground-truth label earns the highest `a_{C,l}` among
/// selected contexts containing it. A trace with no ground-truth labels scores 1.
pub fn coverage_weighted_score(
    trace: &SelectionTrace,
    accuracy: &AccuracyTable,
    catalog: &ContextCatalog,
) -> CoverageScore {
    let mut sum = 0.0;
    let mut uncovered = 0;
    let mut label_frames = 0;
    for f in &trace.frames {
        for &l in &f.truth {
            label_frames += 1;
            let best = f
                .selected
                .iter()
                .filter(|&&c| catalog.get(c).is_some_and(|ctx| ctx.labels.contains(&l)))
                .filter_map(|&c| accuracy.get(c, l))
                .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.max(a))));
            match best {
                Some(a) => sum += a,
                None => uncovered += 1,
            }
        }
    }
    let score = if label_frames == 0 { 1.0 } else { sum / label_frames as f64 };
    CoverageScore { score, uncovered_label_frames: uncovered, label_frames }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub catalog_hash: String,
    pub policy: PolicyTag,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// IntraCoherence with frame-normalized co-occurrence.
    pub intra_coherence: f64,
    /// IntraCoherence on raw pair counts.
    pub intra_coherence_raw: f64,
    pub avg_coverage: f64,
    pub switch_penalty: usize,
    pub switch_cost_symdiff: usize,
    /// Proxy for accuracy comparisons; not an mAP.
    pub coverage_weighted_score: f64,
    pub uncovered_label_frames: usize,
    pub provenance: Provenance,
}

pub fn metrics_report<T: Scalar>(
    trace: &SelectionTrace,
    catalog: &ContextCatalog,
    matrix: &CooccurrenceMatrix<T>,
    accuracy: &AccuracyTable,
) -> Result<MetricsReport, MetricsError> {
    let score = coverage_weighted_score(trace, accuracy, catalog);
    Ok(MetricsReport {
        intra_coherence: intra_coherence(catalog, matrix)?.to_f64_lossy(),
        intra_coherence_raw: intra_coherence(catalog, &matrix.raw_counts())?.to_f64_lossy(),
        avg_coverage: avg_coverage(trace)?,
        switch_penalty: switch_penalty(trace),
        switch_cost_symdiff: switch_cost_symdiff(trace),
        coverage_weighted_score: score.score,
        uncovered_label_frames: score.uncovered_label_frames,
        provenance: Provenance {
            tool_version: crate::TOOL_VERSION.to_string(),
            catalog_hash: trace.header.catalog_hash.clone(),
            policy: trace.header.policy,
            tau: trace.header.tau,
        },
    })
}
