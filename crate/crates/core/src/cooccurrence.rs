use std::fmt::Write as _;

use crate::scalar::{ratio, Scalar};
use crate::stream::{Label, LabelStream};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("label {label} outside label universe of size {label_count}")]
pub struct LabelOutOfRange {
    pub label: Label,
    pub label_count: usize,
}

/// Frame-level label co-occurrence.
///
/// `co(i, j)` is the fraction of frames that contain both `i` and `j`; the
/// diagonal holds each label's own frame frequency. Raw pair counts are kept
/// next to the normalized values.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceMatrix<T> {
    label_count: usize,
    frame_count: usize,
    counts: Vec<u64>,
    values: Vec<T>,
}

impl<T: Scalar> CooccurrenceMatrix<T> {
    pub fn build(stream: &LabelStream) -> Self {
        let k = stream.label_count();
        let mut counts = vec![0u64; k * k];
        for frame in stream.frames() {
            let labels: Vec<usize> = frame.labels.iter().map(|&l| l as usize).collect();
            for (a, &i) in labels.iter().enumerate() {
                counts[i * k + i] += 1;
                for &j in &labels[a + 1..] {
                    counts[i * k + j] += 1;
                    counts[j * k + i] += 1;
                }
            }
        }
        Self::from_counts(k, stream.len(), counts)
    }

    /// Builds from a dense symmetric `K×K` count table.
    pub fn from_counts(label_count: usize, frame_count: usize, counts: Vec<u64>) -> Self {
        assert_eq!(counts.len(), label_count * label_count, "count table must be K×K");
        let t = frame_count as u64;
        let values = counts.iter().map(|&c| ratio(c, t)).collect();
        Self { label_count, frame_count, counts, values }
    }

    /// Builds directly from normalized values (row-major, `K×K`). Counts are
    /// left at zero; used for hand-specified matrices.
    pub fn from_values(label_count: usize, values: Vec<T>) -> Self {
        assert_eq!(values.len(), label_count * label_count, "value table must be K×K");
        Self { label_count, frame_count: 0, counts: vec![0; values.len()], values }
    }

    pub fn label_count(&self) -> usize {
        self.label_count
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn get(&self, i: Label, j: Label) -> T {
        self.values[i as usize * self.label_count + j as usize]
    }

    pub fn count(&self, i: Label, j: Label) -> u64 {
        self.counts[i as usize * self.label_count + j as usize]
    }

    /// Frame frequency of `label` (the diagonal).
    pub fn frequency(&self, label: Label) -> T {
        self.get(label, label)
    }

    /// Same matrix with the raw pair counts as values.
    pub fn raw_counts(&self) -> Self {
        Self {
            label_count: self.label_count,
            frame_count: self.frame_count,
            counts: self.counts.clone(),
            values: self.counts.iter().map(|&c| T::from_count(c)).collect(),
        }
    }

    /// Up to `k` labels `j != label` with `co(label, j) > 0`, strongest first,
    /// ties by ascending id.
    pub fn top_neighbors(&self, label: Label, k: usize) -> Result<Vec<Label>, LabelOutOfRange> {
        if label as usize >= self.label_count {
            return Err(LabelOutOfRange { label, label_count: self.label_count });
        }
        let mut candidates: Vec<(Label, T)> = (0..self.label_count as Label)
            .filter(|&j| j != label)
            .map(|j| (j, self.get(label, j)))
            .filter(|&(_, v)| v > T::zero())
            .collect();
        candidates.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        candidates.truncate(k);
        Ok(candidates.into_iter().map(|(j, _)| j).collect())
    }

    /// CSV dump: a header row of label ids, then one dense row per label.
    pub fn to_csv(&self) -> String {
        let k = self.label_count;
        let mut out = String::new();
        let header: Vec<String> = (0..k).map(|j| j.to_string()).collect();
        let _ = writeln!(out, "label,{}", header.join(","));
        for i in 0..k {
            let row: Vec<String> = self.values[i * k..(i + 1) * k]
                .iter()
                .map(|v| v.to_f64_lossy().to_string())
                .collect();
            let _ = writeln!(out, "{i},{}", row.join(","));
        }
        out
    }
}
