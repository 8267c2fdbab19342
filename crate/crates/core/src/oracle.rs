//! Exact selection oracles for small instances.
//!
//! [`per_frame_min_cover`] finds a minimum-cardinality qualifying cover of one
//! frame's labels. [`sequence_oracle`] minimizes, over a whole stream,
//! `Σ_t |S_t| + λ·|S_t Δ S_(t−1)|` (with `S_(−1) = ∅`) subject to per-frame
//! coverage. The sequence solver is a dynamic program whose state is the
//! selected context subset as a bitmask; the transition minimum over all
//! previous subsets is a Hamming-distance transform computed one bit at a time,
//! so each frame costs `O(n·2^n)` for a catalog of `n` contexts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accuracy::AccuracyTable;
use crate::catalog::{ContextCatalog, ContextId};
use crate::detector::{uncoverable_labels, UncoverablePolicy};
use crate::stream::{Label, LabelSet, LabelStream};
use crate::trace::{ContextSet, PolicyTag, SelectionTrace, TraceHeader};

/// Largest catalog the sequence DP accepts regardless of configuration.
pub const MAX_SUBSET_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    PerFrame,
    Sequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub mode: OracleMode,
    /// Largest `|S_t|` considered per frame by the sequence DP.
    pub s_max: usize,
    /// Largest catalog accepted by the sequence DP.
    pub subset_cap: usize,
    /// Weight on the switching term; 1 reproduces the unweighted objective.
    pub switch_weight: f64,
    #[serde(default)]
    pub uncoverable_policy: UncoverablePolicy,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            mode: OracleMode::Sequence,
            s_max: 4,
            subset_cap: 12,
            switch_weight: 1.0,
            uncoverable_policy: UncoverablePolicy::BestEffort,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("labels {labels:?} have no context with accuracy at or above tau")]
    Uncoverable { labels: Vec<Label> },
    #[error("frame {t}: no cover with at most {s_max} contexts")]
    Infeasible { t: usize, s_max: usize },
    #[error("catalog has {size} contexts, above the subset cap {cap}")]
    CapExceeded { size: usize, cap: usize },
    #[error("frame demands {0} distinct labels; at most 128 are supported")]
    TooManyLabels(usize),
    #[error("invalid oracle configuration: {0}")]
    InvalidConfig(String),
    #[error("frame {t}: {source}")]
    AtFrame {
        t: usize,
        #[source]
        source: Box<OracleError>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cover {
    pub selected: ContextSet,
    pub uncoverable: LabelSet,
}

fn split_demand(
    labels: &LabelSet,
    catalog: &ContextCatalog,
    accuracy: &AccuracyTable,
    tau: f64,
    policy: UncoverablePolicy,
) -> Result<(LabelSet, LabelSet), OracleError> {
    let uncoverable = uncoverable_labels(labels, catalog, accuracy, tau);
    if !uncoverable.is_empty() && policy == UncoverablePolicy::Error {
        return Err(OracleError::Uncoverable { labels: uncoverable.into_iter().collect() });
    }
    let demand = labels.difference(&uncoverable).copied().collect();
    Ok((demand, uncoverable))
}

/// Minimum-cardinality set of contexts serving every label of `labels` at
/// `a_{C,l} ≥ τ`; among minimum covers the lexicographically smallest id list wins.
pub fn per_frame_min_cover(
    labels: &LabelSet,
    catalog: &ContextCatalog,
    accuracy: &AccuracyTable,
    tau: f64,
    policy: UncoverablePolicy,
) -> Result<Cover, OracleError> {
    let (demand, uncoverable) = split_demand(labels, catalog, accuracy, tau, policy)?;
    if demand.is_empty() {
        return Ok(Cover { selected: ContextSet::new(), uncoverable });
    }
    if demand.len() > 128 {
        return Err(OracleError::TooManyLabels(demand.len()));
    }
    let full: u128 = if demand.len() == 128 { u128::MAX } else { (1u128 << demand.len()) - 1 };
    let mut candidates: Vec<(ContextId, u128)> = catalog
        .contexts
        .iter()
        .map(|c| {
            let mask = demand.iter().enumerate().fold(0u128, |m, (bit, &l)| {
                if c.labels.contains(&l) && accuracy.qualifies(c.id, l, tau) {
                    m | (1u128 << bit)
                } else {
                    m
                }
            });
            (c.id, mask)
        })
        .filter(|&(_, m)| m != 0)
        .collect();
    candidates.sort_by_key(|&(id, _)| id);

    // Suffix unions let the search stop as soon as the remaining candidates
    // cannot finish the cover.
    let mut reach = vec![0u128; candidates.len() + 1];
    for i in (0..candidates.len()).rev() {
        reach[i] = reach[i + 1] | candidates[i].1;
    }

    fn search(
        cands: &[(ContextId, u128)],
        reach: &[u128],
        start: usize,
        left: usize,
        mask: u128,
        full: u128,
        picked: &mut Vec<usize>,
    ) -> bool {
        if left == 0 {
            return mask == full;
        }
        for i in start..=cands.len().saturating_sub(left) {
            if mask | reach[i] != full {
                return false;
            }
            picked.push(i);
            if search(cands, reach, i + 1, left - 1, mask | cands[i].1, full, picked) {
                return true;
            }
            picked.pop();
        }
        false
    }

    let mut picked = Vec::new();
    for size in 1..=candidates.len() {
        if search(&candidates, &reach, 0, size, 0, full, &mut picked) {
            let selected = picked.iter().map(|&i| candidates[i].0).collect();
            return Ok(Cover { selected, uncoverable });
        }
    }
    unreachable!("demand filtered to coverable labels")
}

fn oracle_header(catalog: &ContextCatalog, tau: f64, policy: PolicyTag) -> TraceHeader {
    TraceHeader {
        tool_version: crate::TOOL_VERSION.to_string(),
        policy,
        catalog_hash: catalog.digest(),
        tau,
        context_copy: false,
        s_max: None,
        switch_weight: None,
        objective: None,
    }
}

/// Applies [`per_frame_min_cover`] to every ground-truth frame.
pub fn per_frame_oracle_trace(
    stream: &LabelStream,
    catalog: &ContextCatalog,
    accuracy: &AccuracyTable,
    tau: f64,
    policy: UncoverablePolicy,
) -> Result<SelectionTrace, OracleError> {
    let rows = stream
        .frames()
        .iter()
        .map(|f| {
            let cover = per_frame_min_cover(&f.labels, catalog, accuracy, tau, policy)
                .map_err(|e| OracleError::AtFrame { t: f.index, source: Box::new(e) })?;
            Ok((f.labels.clone(), f.labels.clone(), cover.selected, cover.uncoverable))
        })
        .collect::<Result<Vec<_>, OracleError>>()?;
    Ok(SelectionTrace::assemble(oracle_header(catalog, tau, PolicyTag::OraclePerFrame), rows))
}

/// Exact minimizer of the count-plus-switching objective over `stream`'s ground truth.
pub fn sequence_oracle(
    stream: &LabelStream,
    catalog: &ContextCatalog,
    accuracy: &AccuracyTable,
    tau: f64,
    config: &OracleConfig,
) -> Result<SelectionTrace, OracleError> {
    let n = catalog.len();
    if config.subset_cap > MAX_SUBSET_CAP {
        return Err(OracleError::InvalidConfig(format!(
            "subset_cap {} above hard limit {MAX_SUBSET_CAP}",
            config.subset_cap
        )));
    }
    if n > config.subset_cap {
        return Err(OracleError::CapExceeded { size: n, cap: config.subset_cap });
    }
    if config.s_max == 0 {
        return Err(OracleError::InvalidConfig("s_max must be at least 1".into()));
    }
    if config.switch_weight.is_nan() || config.switch_weight < 0.0 {
        return Err(OracleError::InvalidConfig("switch_weight must be non-negative".into()));
    }
    let lambda = config.switch_weight;
    let states = 1usize << n;
    let ids: Vec<ContextId> = catalog.contexts.iter().map(|c| c.id).collect();
    let to_set = |mask: usize| -> ContextSet {
        (0..n).filter(|&b| mask >> b & 1 == 1).map(|b| ids[b]).collect()
    };

    let mut uncoverable_per_frame = Vec::with_capacity(stream.len());
    let mut back: Vec<Vec<u32>> = Vec::with_capacity(stream.len());
    let mut dp: Vec<f64> = Vec::new();
    for frame in stream.frames() {
        let t = frame.index;
        let (demand, uncoverable) =
            split_demand(&frame.labels, catalog, accuracy, tau, config.uncoverable_policy)
                .map_err(|e| OracleError::AtFrame { t, source: Box::new(e) })?;
        uncoverable_per_frame.push(uncoverable);
        let qualifying: Vec<usize> = demand
            .iter()
            .map(|&l| {
                catalog.contexts.iter().enumerate().fold(0usize, |m, (b, c)| {
                    if c.labels.contains(&l) && accuracy.qualifies(c.id, l, tau) {
                        m | 1 << b
                    } else {
                        m
                    }
                })
            })
            .collect();
        let feasible = |mask: usize| {
            (mask.count_ones() as usize) <= config.s_max && qualifying.iter().all(|&q| q & mask != 0)
        };

        // best[m] = min over previous states p of dp[p] + λ·|m Δ p|.
        let start = if t == 0 {
            let mut empty = vec![f64::INFINITY; states];
            empty[0] = 0.0;
            empty
        } else {
            std::mem::take(&mut dp)
        };
        let (best, arg) = hamming_transform(start, n, lambda);
        let mut next = vec![f64::INFINITY; states];
        let mut any = false;
        for (mask, slot) in next.iter_mut().enumerate() {
            if best[mask].is_finite() && feasible(mask) {
                *slot = mask.count_ones() as f64 + best[mask];
                any = true;
            }
        }
        if !any {
            return Err(OracleError::Infeasible { t, s_max: config.s_max });
        }
        dp = next;
        back.push(arg);
    }

    let mut header = oracle_header(catalog, tau, PolicyTag::OracleSequence);
    header.s_max = Some(config.s_max);
    header.switch_weight = Some(lambda);
    if stream.is_empty() {
        header.objective = Some(0.0);
        return Ok(SelectionTrace::assemble(header, Vec::new()));
    }

    let (mut state, objective) = dp
        .iter()
        .enumerate()
        .fold((0usize, f64::INFINITY), |(bm, bv), (m, &v)| if v < bv { (m, v) } else { (bm, bv) });
    let mut masks = vec![0usize; stream.len()];
    for t in (0..stream.len()).rev() {
        masks[t] = state;
        state = back[t][state] as usize;
    }
    header.objective = Some(objective);
    let rows: Vec<_> = stream
        .frames()
        .iter()
        .zip(masks)
        .zip(uncoverable_per_frame)
        .map(|((f, mask), unc)| (f.labels.clone(), f.labels.clone(), to_set(mask), unc))
        .collect();
    Ok(SelectionTrace::assemble(header, rows))
}

/// In-place `value[m] ← min_p value[p] + λ·popcount(m ⊕ p)`, tracking the
/// minimizing `p` in `arg`. Hamming distance separates over bits, so one
/// relaxation pass per bit is exact.
fn hamming_transform(mut value: Vec<f64>, bits: usize, lambda: f64) -> (Vec<f64>, Vec<u32>) {
    let mut arg: Vec<u32> = (0..value.len() as u32).collect();
    for b in 0..bits {
        let step = 1usize << b;
        for m in 0..value.len() {
            let o = m ^ step;
            let cand = value[o] + lambda;
            if cand < value[m] {
                value[m] = cand;
                arg[m] = arg[o];
            }
        }
    }
    (value, arg)
}

/// Runs the oracle selected by `config.mode`.
pub fn run_oracle(
    stream: &LabelStream,
    catalog: &ContextCatalog,
    accuracy: &AccuracyTable,
    tau: f64,
    config: &OracleConfig,
) -> Result<SelectionTrace, OracleError> {
    match config.mode {
        OracleMode::PerFrame => {
            per_frame_oracle_trace(stream, catalog, accuracy, tau, config.uncoverable_policy)
        }
        OracleMode::Sequence => sequence_oracle(stream, catalog, accuracy, tau, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Context, Variant};
    use crate::metrics::selection_objective;

    fn set(v: &[Label]) -> LabelSet {
        v.iter().copied().collect()
    }

    fn cs(v: &[ContextId]) -> ContextSet {
        v.iter().copied().collect()
    }

    fn three_contexts() -> ContextCatalog {
        ContextCatalog::new(
            2,
            3,
            Variant::GreedyOverlap,
            vec![Context::new(1, [1, 2]), Context::new(2, [1]), Context::new(3, [2])],
        )
    }

    fn strict() -> UncoverablePolicy {
        UncoverablePolicy::Error
    }

    #[test]
    fn min_cover_prefers_single_context() {
        let cat = three_contexts();
        let acc = AccuracyTable::uniform(&cat, 0.9).unwrap();
        let c = per_frame_min_cover(&set(&[1, 2]), &cat, &acc, 0.8, strict()).unwrap();
        assert_eq!(c.selected, cs(&[1]));
        assert!(per_frame_min_cover(&set(&[]), &cat, &acc, 0.8, strict()).unwrap().selected.is_empty());
    }

    #[test]
    fn min_cover_forced_and_lexicographic() {
        let cat = ContextCatalog::new(1, 3, Variant::Basic, vec![Context::new(2, [1]), Context::new(3, [2])]);
        let acc = AccuracyTable::uniform(&cat, 0.9).unwrap();
        assert_eq!(per_frame_min_cover(&set(&[1]), &cat, &acc, 0.8, strict()).unwrap().selected, cs(&[2]));

        let cat = ContextCatalog::new(
            2,
            4,
            Variant::GreedyOverlap,
            vec![Context::new(0, [1]), Context::new(1, [1, 2]), Context::new(2, [1, 2])],
        );
        let acc = AccuracyTable::uniform(&cat, 0.9).unwrap();
        assert_eq!(per_frame_min_cover(&set(&[1, 2]), &cat, &acc, 0.8, strict()).unwrap().selected, cs(&[1]));
    }

    #[test]
    fn min_cover_uncoverable() {
        let cat = three_contexts();
        let acc = AccuracyTable::uniform(&cat, 0.9).unwrap();
        assert_eq!(
            per_frame_min_cover(&set(&[1, 9]), &cat, &acc, 0.8, strict()),
            Err(OracleError::Uncoverable { labels: vec![9] })
        );
        let c = per_frame_min_cover(&set(&[1, 9]), &cat, &acc, 0.8, UncoverablePolicy::BestEffort).unwrap();
        assert_eq!(c.selected, cs(&[1]));
        assert_eq!(c.uncoverable, set(&[9]));
    }

    fn full_config(n: usize) -> OracleConfig {
        OracleConfig { s_max: n, uncoverable_policy: strict(), ..OracleConfig::default() }
    }

    #[test]
    fn single_frame_matches_per_frame_oracle() {
        let cat = three_contexts();
        let acc = AccuracyTable::uniform(&cat, 0.9).unwrap();
        let s = LabelStream::from_label_sets(3, vec![set(&[1, 2])]).unwrap();
        let trace = sequence_oracle(&s, &cat, &acc, 0.8, &full_config(3)).unwrap();
        assert_eq!(trace.frames[0].selected, cs(&[1]));
        assert_eq!(trace.header.objective, Some(2.0));
    }

    #[test]
    fn alternating_stream_holds_the_pair_context() {
        let cat = three_contexts();
        let acc = AccuracyTable::uniform(&cat, 0.9).unwrap();
        let t = 4;
        let s = LabelStream::from_label_sets(3, (0..t).map(|i| set(&[1 + (i % 2) as Label]))).unwrap();
        let trace = sequence_oracle(&s, &cat, &acc, 0.8, &full_config(3)).unwrap();
        assert!(trace.selections().all(|x| x == &cs(&[1])));
        assert_eq!(trace.header.objective, Some((t + 1) as f64));
        // Alternating singletons would cost T + 1 + 2(T − 1).
        let alt: Vec<ContextSet> = (0..t).map(|i| cs(&[2 + i % 2])).collect();
        assert_eq!(selection_objective(alt.iter(), 1.0), (t + 1 + 2 * (t - 1)) as f64);
        trace.check_invariants(&cat).unwrap();
    }

    #[test]
    fn constant_stream_objective() {
        let cat = three_contexts();
        let tied = AccuracyTable::uniform(&cat, 0.9).unwrap();
        // With C1 unable to serve label 1 the singleton C2 is the unique optimum.
        let entries = [(1, 1, 0.5), (1, 2, 0.9), (2, 1, 0.9), (3, 2, 0.9)]
            .map(|(context, label, accuracy)| crate::accuracy::AccuracyEntry { context, label, accuracy });
        let forced = AccuracyTable::from_entries(&cat, entries).unwrap();
        for t in 1..6 {
            let s = LabelStream::from_label_sets(3, vec![set(&[1]); t]).unwrap();
            let trace = sequence_oracle(&s, &cat, &tied, 0.8, &full_config(3)).unwrap();
            assert!(trace.selections().all(|x| x == &cs(&[1])));
            assert_eq!(trace.header.objective, Some(t as f64 + 1.0));
            let trace = sequence_oracle(&s, &cat, &forced, 0.8, &full_config(3)).unwrap();
            assert!(trace.selections().all(|x| x == &cs(&[2])));
            assert_eq!(trace.header.objective, Some(t as f64 + 1.0));
        }
    }

    #[test]
    fn s_max_and_cap_enforced() {
        let cat = ContextCatalog::new(1, 3, Variant::Basic, (0..3).map(|i| Context::new(i, [i as Label])).collect());
        let acc = AccuracyTable::uniform(&cat, 0.9).unwrap();
        let s = LabelStream::from_label_sets(3, vec![set(&[0, 1, 2])]).unwrap();
        let cfg = OracleConfig { s_max: 2, ..full_config(3) };
        assert_eq!(sequence_oracle(&s, &cat, &acc, 0.5, &cfg), Err(OracleError::Infeasible { t: 0, s_max: 2 }));
        let cfg = OracleConfig { subset_cap: 2, ..full_config(3) };
        assert_eq!(sequence_oracle(&s, &cat, &acc, 0.5, &cfg), Err(OracleError::CapExceeded { size: 3, cap: 2 }));
    }

    #[test]
    fn switch_weight_zero_reduces_to_per_frame_counts() {
        let cat = three_contexts();
        let acc = AccuracyTable::uniform(&cat, 0.9).unwrap();
        let s = LabelStream::from_label_sets(3, vec![set(&[1]), set(&[2]), set(&[1, 2])]).unwrap();
        let cfg = OracleConfig { switch_weight: 0.0, ..full_config(3) };
        let trace = sequence_oracle(&s, &cat, &acc, 0.5, &cfg).unwrap();
        assert_eq!(trace.header.objective, Some(3.0));
    }

    #[test]
    fn hamming_transform_matches_pairwise_minimum() {
        let n = 4;
        let vals: Vec<f64> = (0..16).map(|m| ((m * 7 + 3) % 11) as f64).collect();
        let (best, arg) = hamming_transform(vals.clone(), n, 1.5);
        for m in 0..16usize {
            let direct = (0..16usize)
                .map(|p| vals[p] + 1.5 * (m ^ p).count_ones() as f64)
                .fold(f64::INFINITY, f64::min);
            assert_eq!(best[m], direct);
            let p = arg[m] as usize;
            assert_eq!(vals[p] + 1.5 * (m ^ p).count_ones() as f64, direct);
        }
    }
}
