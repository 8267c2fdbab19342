//! Multi-label frame streams.
//!
//! A [`LabelStream`] is a dense sequence of frames `0..T`, each carrying the set
//! of active labels drawn from `0..K`. Streams are read from and written to two
//! line formats:
//!
//! - JSONL: an optional header object `{"K": n}` followed by one
//!   `{"t": int, "labels": [int, ...]}` object per line.
//! - CSV: an optional `# K=n` comment, a `t,label` header and one row per
//!   (frame, label) pair. A frame with no labels is written as `t,`.
//!
//! Saving always emits the header and labels in ascending order, so
//! `load(save(s)) == s` for every valid stream.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Label = u32;
pub type LabelSet = BTreeSet<Label>;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: negative label id {value}")]
    NegativeLabel { line: usize, value: i64 },
    #[error("line {line}: negative frame index {value}")]
    NegativeFrame { line: usize, value: i64 },
    #[error("frame indices are not contiguous: missing frame {missing} (next present index {next})")]
    Gap { missing: usize, next: usize },
    #[error("frame {frame}: label {label} outside label universe of size {label_count}")]
    LabelOutOfRange { frame: usize, label: Label, label_count: usize },
    #[error("frame {position} has index {index}; indices must be 0..T in order")]
    BadIndex { position: usize, index: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub index: usize,
    pub labels: LabelSet,
}

/// Dense, validated sequence of frames over the label universe `0..label_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelStream {
    label_count: usize,
    frames: Vec<Frame>,
}

impl LabelStream {
    /// Builds a stream from per-frame label sets; frame `i` gets index `i`.
    pub fn from_label_sets<I>(label_count: usize, sets: I) -> Result<Self, StreamError>
    where
        I: IntoIterator<Item = LabelSet>,
    {
        let frames = sets
            .into_iter()
            .enumerate()
            .map(|(index, labels)| Frame { index, labels })
            .collect();
        Self::new(label_count, frames)
    }

    pub fn new(label_count: usize, frames: Vec<Frame>) -> Result<Self, StreamError> {
        for (position, frame) in frames.iter().enumerate() {
            if frame.index != position {
                return Err(StreamError::BadIndex { position, index: frame.index });
            }
            if let Some(&label) = frame.labels.iter().next_back() {
                if label as usize >= label_count {
                    return Err(StreamError::LabelOutOfRange {
                        frame: position,
                        label,
                        label_count,
                    });
                }
            }
        }
        Ok(Self { label_count, frames })
    }

    pub fn empty(label_count: usize) -> Self {
        Self { label_count, frames: Vec::new() }
    }

    pub fn label_count(&self) -> usize {
        self.label_count
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn labels(&self, t: usize) -> &LabelSet {
        &self.frames[t].labels
    }

    /// Mean of `|Y_t|`; zero for an empty stream.
    pub fn mean_active_labels(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        let total: usize = self.frames.iter().map(|f| f.labels.len()).sum();
        total as f64 / self.frames.len() as f64
    }

    /// Mean over `t` of `|Y_t ∩ Y_{t+1}| / max(1, |Y_t|)`.
    pub fn temporal_continuity(&self) -> f64 {
        if self.frames.len() < 2 {
            return 0.0;
        }
        let sum: f64 = self
            .frames
            .windows(2)
            .map(|w| {
                let kept = w[0].labels.intersection(&w[1].labels).count();
                kept as f64 / w[0].labels.len().max(1) as f64
            })
            .sum();
        sum / (self.frames.len() - 1) as f64
    }

    /// Total number of (frame, label) occurrences.
    pub fn occurrence_count(&self) -> usize {
        self.frames.iter().map(|f| f.labels.len()).sum()
    }

    /// Same stream with every label outside `keep` removed.
    pub fn restrict_to(&self, keep: &LabelSet) -> Self {
        let frames = self
            .frames
            .iter()
            .map(|f| Frame {
                index: f.index,
                labels: f.labels.intersection(keep).copied().collect(),
            })
            .collect();
        Self { label_count: self.label_count, frames }
    }
}

/// Keeps the streams accepted by `keep`.
///
/// This is the hook for dataset-level curation (for example dropping clips whose
/// base-model score falls below a cut-off); the criterion is supplied by the caller.
pub fn filter_streams<F>(streams: Vec<LabelStream>, mut keep: F) -> Vec<LabelStream>
where
    F: FnMut(&LabelStream) -> bool,
{
    streams.into_iter().filter(|s| keep(s)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamFormat {
    Jsonl,
    Csv,
}

impl StreamFormat {
    /// Guesses the format from a file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => StreamFormat::Csv,
            _ => StreamFormat::Jsonl,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Overrides both the file header and the inferred `max id + 1`.
    pub label_count: Option<usize>,
    /// Renumbers frames densely in index order instead of rejecting gaps.
    pub reindex: bool,
}

pub fn load_stream(
    path: &Path,
    format: StreamFormat,
    options: &LoadOptions,
) -> Result<LabelStream, StreamError> {
    let text = std::fs::read_to_string(path)?;
    parse_stream(&text, format, options)
}

pub fn save_stream(path: &Path, format: StreamFormat, stream: &LabelStream) -> Result<(), StreamError> {
    std::fs::write(path, render_stream(stream, format))?;
    Ok(())
}

pub fn parse_stream(
    text: &str,
    format: StreamFormat,
    options: &LoadOptions,
) -> Result<LabelStream, StreamError> {
    match format {
        StreamFormat::Jsonl => parse_jsonl(text, options),
        StreamFormat::Csv => parse_csv(text, options),
    }
}

pub fn render_stream(stream: &LabelStream, format: StreamFormat) -> String {
    match format {
        StreamFormat::Jsonl => to_jsonl(stream),
        StreamFormat::Csv => to_csv(stream),
    }
}

#[derive(Deserialize)]
struct JsonlLine {
    t: Option<serde_json::Value>,
    labels: Option<Vec<serde_json::Value>>,
    #[serde(rename = "K")]
    label_count: Option<usize>,
}

#[derive(Serialize)]
struct JsonlRecord<'a> {
    t: usize,
    labels: &'a LabelSet,
}

fn int_field(value: &serde_json::Value, line: usize, what: &str) -> Result<i64, StreamError> {
    value.as_i64().ok_or_else(|| StreamError::Parse {
        line,
        message: format!("{what} must be an integer, got {value}"),
    })
}

fn checked_label(value: i64, line: usize) -> Result<Label, StreamError> {
    if value < 0 {
        return Err(StreamError::NegativeLabel { line, value });
    }
    Label::try_from(value).map_err(|_| StreamError::Parse {
        line,
        message: format!("label id {value} too large"),
    })
}

fn checked_frame(value: i64, line: usize) -> Result<usize, StreamError> {
    if value < 0 {
        return Err(StreamError::NegativeFrame { line, value });
    }
    Ok(value as usize)
}

pub fn parse_jsonl(text: &str, options: &LoadOptions) -> Result<LabelStream, StreamError> {
    let mut header_k = None;
    let mut frames: BTreeMap<usize, LabelSet> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let rec: JsonlLine = serde_json::from_str(raw).map_err(|e| StreamError::Parse {
            line,
            message: e.to_string(),
        })?;
        match (rec.t, rec.labels) {
            (Some(t), Some(labels)) => {
                let t = checked_frame(int_field(&t, line, "t")?, line)?;
                let set = frames.entry(t).or_default();
                for v in &labels {
                    set.insert(checked_label(int_field(v, line, "label")?, line)?);
                }
            }
            (Some(_), None) => {
                return Err(StreamError::Parse { line, message: "record has `t` but no `labels`".into() })
            }
            (None, _) if rec.label_count.is_some() => header_k = rec.label_count,
            (None, _) => {
                return Err(StreamError::Parse { line, message: "record has no frame index `t`".into() })
            }
        }
    }
    assemble(frames, header_k, options)
}

pub fn parse_csv(text: &str, options: &LoadOptions) -> Result<LabelStream, StreamError> {
    let mut header_k = None;
    let mut frames: BTreeMap<usize, LabelSet> = BTreeMap::new();
    let mut seen_row = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        if let Some(comment) = raw.strip_prefix('#') {
            if let Some(k) = comment.trim().strip_prefix("K=") {
                header_k = Some(k.trim().parse().map_err(|_| StreamError::Parse {
                    line,
                    message: format!("bad label count `{k}`"),
                })?);
            }
            continue;
        }
        if !seen_row {
            seen_row = true;
            if raw.replace(' ', "").eq_ignore_ascii_case("t,label") {
                continue;
            }
        }
        let mut cols = raw.split(',').map(str::trim);
        let (t, label) = match (cols.next(), cols.next(), cols.next()) {
            (Some(t), Some(l), None) => (t, l),
            _ => {
                return Err(StreamError::Parse { line, message: format!("expected `t,label`, got `{raw}`") })
            }
        };
        let parse_int = |s: &str, what: &str| {
            s.parse::<i64>().map_err(|_| StreamError::Parse {
                line,
                message: format!("{what} `{s}` is not an integer"),
            })
        };
        let t = checked_frame(parse_int(t, "frame index")?, line)?;
        let set = frames.entry(t).or_default();
        if !label.is_empty() {
            set.insert(checked_label(parse_int(label, "label")?, line)?);
        }
    }
    assemble(frames, header_k, options)
}

fn assemble(
    frames: BTreeMap<usize, LabelSet>,
    header_k: Option<usize>,
    options: &LoadOptions,
) -> Result<LabelStream, StreamError> {
    if !options.reindex {
        for (expected, &found) in frames.keys().enumerate() {
            if found != expected {
                return Err(StreamError::Gap { missing: expected, next: found });
            }
        }
    }
    let inferred = frames
        .values()
        .filter_map(|s| s.iter().next_back())
        .max()
        .map_or(0, |&m| m as usize + 1);
    let label_count = options.label_count.or(header_k).unwrap_or(inferred);
    LabelStream::from_label_sets(label_count, frames.into_values())
}

pub fn to_jsonl(stream: &LabelStream) -> String {
    let mut out = format!("{{\"K\":{}}}\n", stream.label_count);
    for f in &stream.frames {
        let rec = JsonlRecord { t: f.index, labels: &f.labels };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn to_csv(stream: &LabelStream) -> String {
    let mut out = format!("# K={}\nt,label\n", stream.label_count);
    for f in &stream.frames {
        if f.labels.is_empty() {
            let _ = writeln!(out, "{},", f.index);
        }
        for l in &f.labels {
            let _ = writeln!(out, "{},{}", f.index, l);
        }
    }
    out
}

/// Parameters of the synthetic stream generator.
///
/// Labels are grouped: every planted cluster is one group and every label not
/// in a cluster is its own group. Each group runs an on/off process whose "on"
/// spell lasts `mean_dwell_frames` on average, and each label runs its own
/// member process with the same dwell. A label is active when both its group
/// and its member process are on, so cluster mates tend to arrive together and
/// persist across frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub label_count: usize,
    pub frame_count: usize,
    #[serde(default)]
    pub clusters: Vec<Vec<Label>>,
    pub mean_active_labels: f64,
    pub mean_dwell_frames: f64,
    /// Stationary probability that a member of an active group is present.
    #[serde(default = "default_member_presence")]
    pub member_presence: f64,
    /// At most one group active per frame, so labels from different groups never co-occur.
    #[serde(default)]
    pub exclusive_clusters: bool,
    pub seed: u64,
}

fn default_member_presence() -> f64 {
    0.8
}

impl SyntheticConfig {
    pub fn new(label_count: usize, frame_count: usize, mean_active_labels: f64, seed: u64) -> Self {
        Self {
            label_count,
            frame_count,
            clusters: Vec::new(),
            mean_active_labels,
            mean_dwell_frames: 10.0,
            member_presence: default_member_presence(),
            exclusive_clusters: false,
            seed,
        }
    }

    /// `count` consecutive clusters of `size` labels starting at label 0.
    pub fn with_uniform_clusters(mut self, count: usize, size: usize) -> Self {
        self.clusters = (0..count)
            .map(|c| ((c * size) as Label..((c + 1) * size) as Label).collect())
            .collect();
        self
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        let k = self.label_count;
        if self.mean_active_labels.is_nan() || self.mean_active_labels <= 0.0 {
            return Err(StreamError::Config("mean_active_labels must be positive".into()));
        }
        if self.mean_active_labels > k as f64 {
            return Err(StreamError::Config("mean_active_labels exceeds K".into()));
        }
        if self.mean_dwell_frames.is_nan() || self.mean_dwell_frames < 1.0 {
            return Err(StreamError::Config("mean_dwell_frames must be at least 1".into()));
        }
        if !(self.member_presence > 0.0 && self.member_presence <= 1.0) {
            return Err(StreamError::Config("member_presence must be in (0, 1]".into()));
        }
        let mut seen = LabelSet::new();
        for cluster in &self.clusters {
            if cluster.is_empty() {
                return Err(StreamError::Config("empty cluster".into()));
            }
            for &l in cluster {
                if l as usize >= k {
                    return Err(StreamError::Config(format!("cluster label {l} outside 0..{k}")));
                }
                if !seen.insert(l) {
                    return Err(StreamError::Config(format!("label {l} appears in two clusters")));
                }
            }
        }
        if self.exclusive_clusters {
            let groups = self.groups();
            let mean_size = k as f64 / groups.len() as f64;
            if self.mean_active_labels > mean_size {
                return Err(StreamError::Config(format!(
                    "mean_active_labels {} exceeds the mean group size {mean_size:.3} reachable with exclusive clusters",
                    self.mean_active_labels
                )));
            }
        }
        Ok(())
    }

    fn groups(&self) -> Vec<Vec<Label>> {
        let mut groups = self.clusters.clone();
        let clustered: LabelSet = self.clusters.iter().flatten().copied().collect();
        groups.extend(
            (0..self.label_count as Label)
                .filter(|l| !clustered.contains(l))
                .map(|l| vec![l]),
        );
        groups
    }
}

/// Transition probabilities `(off→on, on→off)` of a two-state chain with
/// stationary on-probability `pi` and mean on-spell `dwell`.
fn chain_rates(pi: f64, dwell: f64) -> (f64, f64) {
    if pi >= 1.0 {
        return (1.0, 0.0);
    }
    if pi <= 0.0 {
        return (0.0, 1.0);
    }
    let off = 1.0 / dwell;
    let on = off * pi / (1.0 - pi);
    if on > 1.0 {
        (1.0, (1.0 - pi) / pi)
    } else {
        (on, off)
    }
}

#[derive(Clone, Copy)]
struct OnOff {
    on: bool,
    p_on: f64,
    p_off: f64,
}

impl OnOff {
    fn stationary(rng: &mut ChaCha8Rng, pi: f64, dwell: f64) -> Self {
        let (p_on, p_off) = chain_rates(pi, dwell);
        Self { on: rng.gen::<f64>() < pi, p_on, p_off }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) {
        let u: f64 = rng.gen();
        self.on = if self.on { u >= self.p_off } else { u < self.p_on };
    }
}

pub fn generate_synthetic_stream(config: &SyntheticConfig) -> Result<LabelStream, StreamError> {
    if config.frame_count == 0 {
        return Ok(LabelStream::empty(config.label_count));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let k = config.label_count;
    let groups = config.groups();
    let dwell = config.mean_dwell_frames;
    let target = config.mean_active_labels;

    let mut frames = Vec::with_capacity(config.frame_count);
    if config.exclusive_clusters {
        // One regime chain decides whether any group is active; the active
        // group is redrawn on average once per dwell period.
        let mean_size = k as f64 / groups.len() as f64;
        let mut presence = config.member_presence;
        let mut busy = target / (presence * mean_size);
        if busy > 1.0 {
            busy = 1.0;
            presence = target / mean_size;
        }
        let mut regime = OnOff::stationary(&mut rng, busy, dwell);
        let mut members: Vec<OnOff> =
            (0..k).map(|_| OnOff::stationary(&mut rng, presence, dwell)).collect();
        let mut active = rng.gen_range(0..groups.len());
        for t in 0..config.frame_count {
            let labels: LabelSet = if regime.on {
                groups[active].iter().copied().filter(|&l| members[l as usize].on).collect()
            } else {
                LabelSet::new()
            };
            frames.push(Frame { index: t, labels });
            let was_on = regime.on;
            regime.step(&mut rng);
            let redraw = rng.gen::<f64>() < 1.0 / dwell;
            if regime.on && (!was_on || redraw) {
                active = rng.gen_range(0..groups.len());
            }
            members.iter_mut().for_each(|m| m.step(&mut rng));
        }
    } else {
        let presence = config.member_presence.max(target / k as f64).min(1.0);
        let group_pi = (target / (presence * k as f64)).min(1.0);
        let mut group_state: Vec<OnOff> =
            groups.iter().map(|_| OnOff::stationary(&mut rng, group_pi, dwell)).collect();
        let mut members: Vec<OnOff> =
            (0..k).map(|_| OnOff::stationary(&mut rng, presence, dwell)).collect();
        for t in 0..config.frame_count {
            let mut labels = LabelSet::new();
            for (g, group) in groups.iter().enumerate() {
                if group_state[g].on {
                    labels.extend(group.iter().copied().filter(|&l| members[l as usize].on));
                }
            }
            frames.push(Frame { index: t, labels });
            group_state.iter_mut().for_each(|s| s.step(&mut rng));
            members.iter_mut().for_each(|m| m.step(&mut rng));
        }
    }
    LabelStream::new(k, frames)
}

/// I.i.d. per-(frame, label) corruption standing in for base-model predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub false_negative_rate: f64,
    pub false_positive_rate: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(false_negative_rate: f64, false_positive_rate: f64, seed: u64) -> Result<Self, StreamError> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(false_negative_rate) || !ok(false_positive_rate) {
            return Err(StreamError::Config("noise rates must lie in [0, 1]".into()));
        }
        Ok(Self { false_negative_rate, false_positive_rate, seed })
    }
}

pub fn apply_prediction_noise(stream: &LabelStream, noise: &NoiseConfig) -> LabelStream {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let frames = stream
        .frames
        .iter()
        .map(|f| {
            let labels = (0..stream.label_count as Label)
                .filter(|l| {
                    let u: f64 = rng.gen();
                    if f.labels.contains(l) {
                        u >= noise.false_negative_rate
                    } else {
                        u < noise.false_positive_rate
                    }
                })
                .collect();
            Frame { index: f.index, labels }
        })
        .collect();
    LabelStream { label_count: stream.label_count, frames }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[Label]) -> LabelSet {
        v.iter().copied().collect()
    }

    fn jsonl(text: &str) -> Result<LabelStream, StreamError> {
        parse_jsonl(text, &LoadOptions::default())
    }

    #[test]
    fn jsonl_transcription() {
        let s = jsonl("{\"t\":0,\"labels\":[1,3]}\n{\"t\":1,\"labels\":[1]}\n").unwrap();
        assert_eq!(s.label_count(), 4);
        assert_eq!(s.len(), 2);
        assert_eq!(s.labels(0), &set(&[1, 3]));
        assert_eq!(s.labels(1), &set(&[1]));
    }

    #[test]
    fn empty_file_is_empty_stream() {
        let s = jsonl("").unwrap();
        assert_eq!((s.label_count(), s.len()), (0, 0));
        let s = parse_csv("", &LoadOptions::default()).unwrap();
        assert_eq!((s.label_count(), s.len()), (0, 0));
    }

    #[test]
    fn duplicate_labels_collapse() {
        let s = jsonl("{\"t\":0,\"labels\":[2,2]}").unwrap();
        assert_eq!(s.labels(0), &set(&[2]));
        assert_eq!(s.label_count(), 3);
    }

    #[test]
    fn records_sorted_by_index() {
        let s = jsonl("{\"t\":1,\"labels\":[0]}\n{\"t\":0,\"labels\":[4]}").unwrap();
        assert_eq!(s.labels(0), &set(&[4]));
        assert_eq!(s.labels(1), &set(&[0]));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let err = jsonl("{\"t\":0,\"labels\":[1]}\n{not json}\n").unwrap_err();
        assert!(matches!(err, StreamError::Parse { line: 2, .. }), "{err}");
        let err = jsonl("{\"labels\":[1]}").unwrap_err();
        assert!(matches!(err, StreamError::Parse { line: 1, .. }));
    }

    #[test]
    fn negative_label_rejected() {
        let err = jsonl("{\"t\":0,\"labels\":[1,-2]}").unwrap_err();
        assert!(matches!(err, StreamError::NegativeLabel { line: 1, value: -2 }));
        let err = parse_csv("t,label\n0,-1\n", &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, StreamError::NegativeLabel { line: 2, value: -1 }));
    }

    #[test]
    fn gap_reports_first_missing_frame() {
        let text = "{\"t\":0,\"labels\":[]}\n{\"t\":2,\"labels\":[1]}\n{\"t\":5,\"labels\":[1]}";
        let err = jsonl(text).unwrap_err();
        assert!(matches!(err, StreamError::Gap { missing: 1, next: 2 }), "{err}");
        let s = parse_jsonl(text, &LoadOptions { reindex: true, ..Default::default() }).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.labels(2), &set(&[1]));
    }

    #[test]
    fn label_count_override_and_header() {
        let s = jsonl("{\"K\":9}\n{\"t\":0,\"labels\":[1]}").unwrap();
        assert_eq!(s.label_count(), 9);
        let opts = LoadOptions { label_count: Some(12), ..Default::default() };
        let s = parse_jsonl("{\"K\":9}\n{\"t\":0,\"labels\":[1]}", &opts).unwrap();
        assert_eq!(s.label_count(), 12);
        let opts = LoadOptions { label_count: Some(1), ..Default::default() };
        assert!(matches!(
            parse_jsonl("{\"t\":0,\"labels\":[1]}", &opts),
            Err(StreamError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn csv_rows_group_by_frame() {
        let s = parse_csv("# K=6\nt,label\n0,1\n0,3\n1,\n2,5\n", &LoadOptions::default()).unwrap();
        assert_eq!(s.label_count(), 6);
        assert_eq!(s.labels(0), &set(&[1, 3]));
        assert!(s.labels(1).is_empty());
        assert_eq!(s.labels(2), &set(&[5]));
    }

    #[test]
    fn canonical_rendering() {
        let s = LabelStream::from_label_sets(5, vec![set(&[3, 1]), set(&[])]).unwrap();
        assert_eq!(to_jsonl(&s), "{\"K\":5}\n{\"t\":0,\"labels\":[1,3]}\n{\"t\":1,\"labels\":[]}\n");
        assert_eq!(to_csv(&s), "# K=5\nt,label\n0,1\n0,3\n1,\n");
    }

    #[test]
    fn zero_frames_synthetic() {
        let s = generate_synthetic_stream(&SyntheticConfig::new(10, 0, 2.0, 1)).unwrap();
        assert_eq!((s.label_count(), s.len()), (10, 0));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SyntheticConfig::new(10, 200, 2.0, 42);
        assert_eq!(generate_synthetic_stream(&cfg).unwrap(), generate_synthetic_stream(&cfg).unwrap());
        let other = SyntheticConfig { seed: 43, ..cfg.clone() };
        assert_ne!(generate_synthetic_stream(&cfg).unwrap(), generate_synthetic_stream(&other).unwrap());
    }

    #[test]
    fn synthetic_mean_active_within_twenty_percent() {
        let s = generate_synthetic_stream(&SyntheticConfig::new(10, 2000, 2.0, 7)).unwrap();
        let mean = s.mean_active_labels();
        assert!((mean - 2.0).abs() <= 0.4, "mean |Y_t| = {mean}");
    }

    #[test]
    fn synthetic_rejects_excess_mean() {
        let err = generate_synthetic_stream(&SyntheticConfig::new(20, 10, 50.0, 1)).unwrap_err();
        assert!(err.to_string().contains("mean_active_labels exceeds K"));
    }

    #[test]
    fn exclusive_clusters_never_mix() {
        let cfg = SyntheticConfig {
            exclusive_clusters: true,
            ..SyntheticConfig::new(20, 500, 3.0, 5).with_uniform_clusters(4, 5)
        };
        let s = generate_synthetic_stream(&cfg).unwrap();
        for f in s.frames() {
            let groups: BTreeSet<u32> = f.labels.iter().map(|l| l / 5).collect();
            assert!(groups.len() <= 1, "frame {} mixes clusters: {:?}", f.index, f.labels);
        }
        assert!(s.mean_active_labels() > 1.5);
    }

    #[test]
    fn noise_identity_and_full_drop() {
        let s = generate_synthetic_stream(&SyntheticConfig::new(10, 100, 3.0, 3)).unwrap();
        let same = apply_prediction_noise(&s, &NoiseConfig::new(0.0, 0.0, 9).unwrap());
        assert_eq!(same, s);
        let dropped = apply_prediction_noise(&s, &NoiseConfig::new(1.0, 0.0, 9).unwrap());
        assert_eq!(dropped.len(), s.len());
        assert!(dropped.frames().iter().all(|f| f.labels.is_empty()));
    }

    #[test]
    fn noise_rates_validated() {
        assert!(NoiseConfig::new(1.5, 0.0, 0).is_err());
        assert!(NoiseConfig::new(0.0, -0.1, 0).is_err());
    }

    #[test]
    fn false_negative_count_within_binomial_band() {
        // 10,000 occurrences: 1000 labels present in each of 10 frames.
        let all: LabelSet = (0..1000).collect();
        let s = LabelStream::from_label_sets(1000, vec![all; 10]).unwrap();
        assert_eq!(s.occurrence_count(), 10_000);
        let noisy = apply_prediction_noise(&s, &NoiseConfig::new(0.1, 0.0, 2024).unwrap());
        let dropped = s.occurrence_count() - noisy.occurrence_count();
        // sd = sqrt(10000 * 0.1 * 0.9) = 30, so 3 sd is 90 < 100.
        assert!((900..=1100).contains(&dropped), "dropped {dropped}");
    }
}
