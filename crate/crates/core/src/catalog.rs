//! Context catalogs and their greedy construction.
//!
//! A context is a small label set served by one adapter. Catalogs are built
//! from the co-occurrence matrix by seeding a cluster at each valid label (most
//! frequent first) and growing it with the label's strongest co-occurring
//! neighbors up to the size budget. Labels left uncovered afterwards are
//! inserted by [`repair_uncovered`].

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cooccurrence::CooccurrenceMatrix;
use crate::digest::sha256_hex;
use crate::scalar::{ratio, Scalar};
use crate::stream::{Label, LabelSet};

pub type ContextId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Context {
    pub id: ContextId,
    pub labels: LabelSet,
}

impl Context {
    pub fn new(id: ContextId, labels: impl IntoIterator<Item = Label>) -> Self {
        Self { id, labels: labels.into_iter().collect() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Basic,
    GreedyNonoverlap,
    GreedyOverlap,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Basic, Variant::GreedyNonoverlap, Variant::GreedyOverlap];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Basic => "basic",
            Variant::GreedyNonoverlap => "greedy_nonoverlap",
            Variant::GreedyOverlap => "greedy_overlap",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "basic" | "random" => Ok(Variant::Basic),
            "greedy_nonoverlap" | "greedy" | "nonoverlap" => Ok(Variant::GreedyNonoverlap),
            "greedy_overlap" | "overlap" => Ok(Variant::GreedyOverlap),
            other => Err(format!("unknown catalog variant `{other}`")),
        }
    }
}

/// Construction strategy; the basic variant needs its shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuildVariant {
    Basic { seed: u64 },
    GreedyNonoverlap,
    GreedyOverlap,
}

impl BuildVariant {
    pub fn from_variant(variant: Variant, seed: u64) -> Self {
        match variant {
            Variant::Basic => BuildVariant::Basic { seed },
            Variant::GreedyNonoverlap => BuildVariant::GreedyNonoverlap,
            Variant::GreedyOverlap => BuildVariant::GreedyOverlap,
        }
    }

    pub fn tag(self) -> Variant {
        match self {
            BuildVariant::Basic { .. } => Variant::Basic,
            BuildVariant::GreedyNonoverlap => Variant::GreedyNonoverlap,
            BuildVariant::GreedyOverlap => Variant::GreedyOverlap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextCatalog {
    #[serde(rename = "B")]
    pub budget: usize,
    #[serde(rename = "M_max")]
    pub max_contexts: usize,
    pub variant: Variant,
    pub contexts: Vec<Context>,
}

impl ContextCatalog {
    pub fn new(budget: usize, max_contexts: usize, variant: Variant, contexts: Vec<Context>) -> Self {
        Self { budget, max_contexts, variant, contexts }
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn get(&self, id: ContextId) -> Option<&Context> {
        match self.contexts.get(id) {
            Some(c) if c.id == id => Some(c),
            _ => self.contexts.iter().find(|c| c.id == id),
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ContextId> + '_ {
        self.contexts.iter().map(|c| c.id)
    }

    /// Union of all context label sets.
    pub fn covered_labels(&self) -> LabelSet {
        self.contexts.iter().flat_map(|c| c.labels.iter().copied()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// SHA-256 of the compact JSON form; identifies the catalog in traces and reports.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("catalog serializes"))
    }

    fn next_id(&self) -> ContextId {
        self.contexts.iter().map(|c| c.id + 1).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("coverage infeasible under the size and count limits; uncovered labels: {uncovered:?}")]
    Infeasible { uncovered: Vec<Label> },
    #[error("constructed catalog failed validation: {0}")]
    Invalid(ValidationReport),
}

/// Labels whose frame frequency exceeds `min_frequency` (a fraction of frames).
pub fn valid_labels<T: Scalar>(matrix: &CooccurrenceMatrix<T>, min_frequency: f64) -> LabelSet {
    let t = matrix.frame_count() as f64;
    (0..matrix.label_count() as Label)
        .filter(|&l| {
            let c = matrix.count(l, l);
            c > 0 && c as f64 / t.max(1.0) > min_frequency
        })
        .collect()
}

pub fn build_contexts<T: Scalar>(
    matrix: &CooccurrenceMatrix<T>,
    valid: &LabelSet,
    budget: usize,
    max_contexts: usize,
    variant: BuildVariant,
) -> Result<ContextCatalog, CatalogError> {
    if budget == 0 {
        return Err(CatalogError::InvalidParameter("B must be at least 1".into()));
    }
    if max_contexts == 0 {
        return Err(CatalogError::InvalidParameter("M_max must be at least 1".into()));
    }
    if let Some(&l) = valid.iter().find(|&&l| l as usize >= matrix.label_count()) {
        return Err(CatalogError::InvalidParameter(format!(
            "valid label {l} outside label universe of size {}",
            matrix.label_count()
        )));
    }
    let catalog = match variant {
        BuildVariant::Basic { seed } => build_basic(valid, budget, max_contexts, seed)?,
        BuildVariant::GreedyNonoverlap => build_greedy(matrix, valid, budget, max_contexts, false)?,
        BuildVariant::GreedyOverlap => build_greedy(matrix, valid, budget, max_contexts, true)?,
    };
    let report = validate_catalog(&catalog, valid);
    if !report.is_ok() {
        return Err(CatalogError::Invalid(report));
    }
    Ok(catalog)
}

fn build_basic(
    valid: &LabelSet,
    budget: usize,
    max_contexts: usize,
    seed: u64,
) -> Result<ContextCatalog, CatalogError> {
    let mut labels: Vec<Label> = valid.iter().copied().collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let chunks: Vec<&[Label]> = labels.chunks(budget).collect();
    if chunks.len() > max_contexts {
        let mut uncovered: Vec<Label> = chunks[max_contexts..].concat();
        uncovered.sort_unstable();
        return Err(CatalogError::Infeasible { uncovered });
    }
    let contexts = chunks
        .into_iter()
        .enumerate()
        .map(|(id, chunk)| Context::new(id, chunk.iter().copied()))
        .collect();
    Ok(ContextCatalog::new(budget, max_contexts, Variant::Basic, contexts))
}

fn build_greedy<T: Scalar>(
    matrix: &CooccurrenceMatrix<T>,
    valid: &LabelSet,
    budget: usize,
    max_contexts: usize,
    allow_overlap: bool,
) -> Result<ContextCatalog, CatalogError> {
    let variant = if allow_overlap { Variant::GreedyOverlap } else { Variant::GreedyNonoverlap };
    let mut seeds: Vec<Label> = valid.iter().copied().collect();
    // Most frequent first; ties by ascending id (the sort is stable).
    seeds.sort_by(|&a, &b| {
        matrix
            .count(b, b)
            .cmp(&matrix.count(a, a))
            .then(a.cmp(&b))
    });

    let mut catalog = ContextCatalog::new(budget, max_contexts, variant, Vec::new());
    let mut seen: BTreeSet<LabelSet> = BTreeSet::new();
    let mut assigned = LabelSet::new();
    for &seed in &seeds {
        if !allow_overlap && assigned.contains(&seed) {
            continue;
        }
        let mut cluster: LabelSet = std::iter::once(seed).collect();
        let neighbors = matrix
            .top_neighbors(seed, matrix.label_count())
            .expect("seed validated against label universe");
        for n in neighbors {
            if cluster.len() >= budget {
                break;
            }
            if valid.contains(&n) && (allow_overlap || !assigned.contains(&n)) {
                cluster.insert(n);
            }
        }
        if catalog.len() < max_contexts && !seen.contains(&cluster) {
            if !allow_overlap {
                assigned.extend(cluster.iter().copied());
            }
            seen.insert(cluster.clone());
            let id = catalog.len();
            catalog.contexts.push(Context { id, labels: cluster });
        }
    }

    let uncovered: LabelSet = valid.difference(&catalog.covered_labels()).copied().collect();
    repair_uncovered(&catalog, &uncovered, matrix)
}

/// Inserts each uncovered label into the context with room that maximizes the
/// summed co-occurrence with its members (ties: smaller context, then lower
/// id). When every context is full a singleton context is opened, as long as
/// the count limit allows.
pub fn repair_uncovered<T: Scalar>(
    catalog: &ContextCatalog,
    uncovered: &LabelSet,
    matrix: &CooccurrenceMatrix<T>,
) -> Result<ContextCatalog, CatalogError> {
    let covered = catalog.covered_labels();
    if let Some(l) = uncovered.intersection(&covered).next() {
        return Err(CatalogError::InvalidParameter(format!("label {l} is already covered")));
    }
    if let Some(&l) = uncovered.iter().find(|&&l| l as usize >= matrix.label_count()) {
        return Err(CatalogError::InvalidParameter(format!(
            "uncovered label {l} outside label universe of size {}",
            matrix.label_count()
        )));
    }
    let mut out = catalog.clone();
    let pending: Vec<Label> = uncovered.iter().copied().collect();
    for (i, &label) in pending.iter().enumerate() {
        let best = out
            .contexts
            .iter()
            .enumerate()
            .filter(|(_, c)| c.len() < out.budget)
            .map(|(pos, c)| {
                let score = c.labels.iter().fold(T::zero(), |acc, &m| acc + matrix.get(label, m));
                (pos, score, c.len(), c.id)
            })
            .reduce(|best, cand| {
                let better = match cand.1.partial_cmp(&best.1) {
                    Some(std::cmp::Ordering::Greater) => true,
                    Some(std::cmp::Ordering::Equal) => (cand.2, cand.3) < (best.2, best.3),
                    _ => false,
                };
                if better {
                    cand
                } else {
                    best
                }
            });
        match best {
            Some((pos, ..)) => {
                out.contexts[pos].labels.insert(label);
            }
            None if out.len() < out.max_contexts => {
                let id = out.next_id();
                out.contexts.push(Context::new(id, [label]));
            }
            None => {
                return Err(CatalogError::Infeasible { uncovered: pending[i..].to_vec() });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptyContext { context: ContextId },
    Oversize { context: ContextId, size: usize, budget: usize },
    TooManyContexts { count: usize, max: usize },
    DuplicateId { context: ContextId },
    Duplicate { first: ContextId, second: ContextId },
    Overlap { first: ContextId, second: ContextId, labels: Vec<Label> },
    Uncovered { labels: Vec<Label> },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("no violations");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| format!("{v:?}")).collect();
        f.write_str(&parts.join("; "))
    }
}

pub fn validate_catalog(catalog: &ContextCatalog, valid: &LabelSet) -> ValidationReport {
    let mut violations = Vec::new();
    if catalog.len() > catalog.max_contexts {
        violations.push(Violation::TooManyContexts { count: catalog.len(), max: catalog.max_contexts });
    }
    let mut ids = BTreeSet::new();
    for c in &catalog.contexts {
        if !ids.insert(c.id) {
            violations.push(Violation::DuplicateId { context: c.id });
        }
        if c.is_empty() {
            violations.push(Violation::EmptyContext { context: c.id });
        }
        if c.len() > catalog.budget {
            violations.push(Violation::Oversize { context: c.id, size: c.len(), budget: catalog.budget });
        }
    }
    for (i, a) in catalog.contexts.iter().enumerate() {
        for b in &catalog.contexts[i + 1..] {
            if a.labels == b.labels {
                violations.push(Violation::Duplicate { first: a.id, second: b.id });
            } else if catalog.variant == Variant::GreedyNonoverlap {
                let shared: Vec<Label> = a.labels.intersection(&b.labels).copied().collect();
                if !shared.is_empty() {
                    violations.push(Violation::Overlap { first: a.id, second: b.id, labels: shared });
                }
            }
        }
    }
    let covered = catalog.covered_labels();
    let missing: Vec<Label> = valid.difference(&covered).copied().collect();
    if !missing.is_empty() {
        violations.push(Violation::Uncovered { labels: missing });
    }
    ValidationReport { violations }
}

/// Requested vs realized sizes, reported next to every catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogShape {
    pub budget: usize,
    pub requested_max_contexts: usize,
    pub realized_contexts: usize,
    pub largest_context: usize,
}

impl ContextCatalog {
    pub fn shape(&self) -> CatalogShape {
        CatalogShape {
            budget: self.budget,
            requested_max_contexts: self.max_contexts,
            realized_contexts: self.len(),
            largest_context: self.contexts.iter().map(Context::len).max().unwrap_or(0),
        }
    }

    /// Fraction of catalog slots in use, `Σ|C| / (|𝒞|·B)`.
    pub fn fill_ratio<T: Scalar>(&self) -> T {
        let used: usize = self.contexts.iter().map(Context::len).sum();
        ratio((used) as u64, (self.len() * self.budget) as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::LabelStream;

    fn matrix(k: usize, frames: &[&[Label]]) -> CooccurrenceMatrix<f64> {
        let s = LabelStream::from_label_sets(
            k,
            frames.iter().map(|f| f.iter().copied().collect::<LabelSet>()),
        )
        .unwrap();
        CooccurrenceMatrix::build(&s)
    }

    fn labels(c: &ContextCatalog) -> Vec<Vec<Label>> {
        c.contexts.iter().map(|c| c.labels.iter().copied().collect()).collect()
    }

    fn set(v: &[Label]) -> LabelSet {
        v.iter().copied().collect()
    }

    #[test]
    fn planted_pairs_nonoverlap() {
        let m = matrix(4, &[&[0, 1], &[0, 1], &[2, 3], &[2, 3]]);
        let c = build_contexts(&m, &set(&[0, 1, 2, 3]), 2, 4, BuildVariant::GreedyNonoverlap).unwrap();
        assert_eq!(labels(&c), vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn single_label_universe() {
        let m = matrix(1, &[&[0]]);
        for v in [BuildVariant::Basic { seed: 1 }, BuildVariant::GreedyNonoverlap, BuildVariant::GreedyOverlap] {
            let c = build_contexts(&m, &set(&[0]), 1, 1, v).unwrap();
            assert_eq!(labels(&c), vec![vec![0]]);
        }
    }

    #[test]
    fn bridging_label_shared_under_overlap() {
        // Label 4 co-occurs with both planted pairs. With B = 3 each pair's
        // seed pulls 4 in as its next-strongest neighbor.
        let m = matrix(5, &[&[0, 1, 4], &[0, 1], &[2, 3, 4], &[2, 3]]);
        let valid = set(&[0, 1, 2, 3, 4]);
        let c = build_contexts(&m, &valid, 3, 10, BuildVariant::GreedyOverlap).unwrap();
        assert_eq!(labels(&c), vec![vec![0, 1, 4], vec![2, 3, 4]]);
        let holders = c.contexts.iter().filter(|c| c.labels.contains(&4)).count();
        assert!(holders >= 2);

        let c = build_contexts(&m, &valid, 3, 10, BuildVariant::GreedyNonoverlap).unwrap();
        assert_eq!(labels(&c), vec![vec![0, 1, 4], vec![2, 3]]);
    }

    #[test]
    fn basic_is_seeded_chunking() {
        let m = matrix(7, &[&[0, 1, 2, 3, 4, 5, 6]]);
        let valid: LabelSet = (0..7).collect();
        let a = build_contexts(&m, &valid, 3, 3, BuildVariant::Basic { seed: 3 }).unwrap();
        let b = build_contexts(&m, &valid, 3, 3, BuildVariant::Basic { seed: 3 }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.contexts.iter().map(Context::len).collect::<Vec<_>>(), vec![3, 3, 1]);
        assert_eq!(a.covered_labels(), valid);
        let err = build_contexts(&m, &valid, 3, 2, BuildVariant::Basic { seed: 3 }).unwrap_err();
        assert!(matches!(err, CatalogError::Infeasible { ref uncovered } if uncovered.len() == 1));
    }

    #[test]
    fn repair_picks_best_cooccurring_context() {
        let mut v = vec![0.0; 16];
        v[3 * 4 + 2] = 0.9;
        v[2 * 4 + 3] = 0.9;
        let m = CooccurrenceMatrix::from_values(4, v);
        let cat = ContextCatalog::new(
            3,
            2,
            Variant::GreedyNonoverlap,
            vec![Context::new(0, [0, 1]), Context::new(1, [2])],
        );
        let out = repair_uncovered(&cat, &set(&[3]), &m).unwrap();
        assert_eq!(labels(&out), vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn repair_tie_prefers_smaller_then_lower_id() {
        let m = CooccurrenceMatrix::from_values(5, vec![0.0; 25]);
        let cat = ContextCatalog::new(
            3,
            3,
            Variant::GreedyOverlap,
            vec![Context::new(0, [0, 1]), Context::new(1, [2]), Context::new(2, [3])],
        );
        let out = repair_uncovered(&cat, &set(&[4]), &m).unwrap();
        assert_eq!(labels(&out)[1], vec![2, 4]);
    }

    #[test]
    fn repair_identity_and_infeasible() {
        let m = CooccurrenceMatrix::from_values(8, vec![0.0; 64]);
        let cat = ContextCatalog::new(2, 1, Variant::Basic, vec![Context::new(0, [0, 1])]);
        assert_eq!(repair_uncovered(&cat, &LabelSet::new(), &m).unwrap(), cat);
        let err = repair_uncovered(&cat, &set(&[7]), &m).unwrap_err();
        assert_eq!(err, CatalogError::Infeasible { uncovered: vec![7] });
    }

    #[test]
    fn repair_opens_singleton_below_limit() {
        let m = CooccurrenceMatrix::from_values(8, vec![0.0; 64]);
        let cat = ContextCatalog::new(2, 2, Variant::Basic, vec![Context::new(0, [0, 1])]);
        let out = repair_uncovered(&cat, &set(&[7]), &m).unwrap();
        assert_eq!(labels(&out), vec![vec![0, 1], vec![7]]);
    }

    #[test]
    fn greedy_reports_infeasible_labels() {
        let m = matrix(6, &[&[0, 1], &[2, 3], &[4, 5]]);
        let err = build_contexts(&m, &(0..6).collect(), 2, 2, BuildVariant::GreedyNonoverlap).unwrap_err();
        assert_eq!(err, CatalogError::Infeasible { uncovered: vec![4, 5] });
    }

    #[test]
    fn validation_reports() {
        let dup = ContextCatalog::new(2, 5, Variant::GreedyOverlap, vec![Context::new(0, [0, 1]), Context::new(1, [0, 1])]);
        assert!(validate_catalog(&dup, &set(&[0, 1]))
            .violations
            .contains(&Violation::Duplicate { first: 0, second: 1 }));

        let big = ContextCatalog::new(2, 5, Variant::Basic, vec![Context::new(0, [0, 1, 2])]);
        assert_eq!(
            validate_catalog(&big, &set(&[0, 1, 2])).violations,
            vec![Violation::Oversize { context: 0, size: 3, budget: 2 }]
        );

        let short = ContextCatalog::new(2, 5, Variant::Basic, vec![Context::new(0, [0, 1])]);
        assert_eq!(
            validate_catalog(&short, &set(&[0, 1, 2])).violations,
            vec![Violation::Uncovered { labels: vec![2] }]
        );

        let overlap = ContextCatalog::new(
            2,
            1,
            Variant::GreedyNonoverlap,
            vec![Context::new(0, [0, 1]), Context::new(1, [1, 2])],
        );
        let v = validate_catalog(&overlap, &set(&[0, 1, 2])).violations;
        assert!(v.contains(&Violation::TooManyContexts { count: 2, max: 1 }));
        assert!(v.contains(&Violation::Overlap { first: 0, second: 1, labels: vec![1] }));
    }

    #[test]
    fn json_schema_round_trip() {
        let cat = ContextCatalog::new(5, 11, Variant::GreedyNonoverlap, vec![Context::new(0, [3, 1])]);
        let json = serde_json::to_string(&cat).unwrap();
        assert_eq!(
            json,
            r#"{"B":5,"M_max":11,"variant":"greedy_nonoverlap","contexts":[{"id":0,"labels":[1,3]}]}"#
        );
        assert_eq!(ContextCatalog::from_json(&json).unwrap(), cat);
    }

    #[test]
    fn valid_label_threshold() {
        let m = matrix(4, &[&[0, 1], &[0], &[0, 2], &[0]]);
        assert_eq!(valid_labels(&m, 0.0), set(&[0, 1, 2]));
        assert_eq!(valid_labels(&m, 0.3), set(&[0]));
    }
}
