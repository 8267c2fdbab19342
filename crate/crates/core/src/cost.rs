//! Parameter and MAC accounting for low-rank adapters, and a linear
//! latency/power model driven by the number of active contexts.
//!
//! Calibration constants live in a JSON file; [`Calibration::builtin`] embeds
//! `calibration/edge_default.json` and every report carries its `source`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::SelectionTrace;

const BUILTIN_CALIBRATION: &str = include_str!("../calibration/edge_default.json");

const BYTES_PER_PARAM: u64 = 4;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("invalid architecture: {0}")]
    Arch(String),
    #[error("invalid cost parameters: {0}")]
    Cost(String),
    #[error("calibration file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("no profile named `{0}` in calibration")]
    UnknownProfile(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchParams {
    pub name: String,
    pub layers: usize,
    pub hidden_dim: usize,
    pub lora_rank: usize,
    /// Projections adapted per layer (query and value by default).
    pub adapted_projections: usize,
    pub adapted_layers: usize,
    pub token_count: usize,
    /// Output classes of each context's classification head.
    pub head_classes: usize,
    pub base_params: u64,
    pub base_macs: u64,
}

impl ArchParams {
    /// DeiT-tiny at 224² input: 196 patches plus the class token, adapters on
    /// the last 20% of the 12 layers.
    pub fn deit_tiny() -> Self {
        Self {
            name: "deit-tiny".into(),
            layers: 12,
            hidden_dim: 192,
            lora_rank: 16,
            adapted_projections: 2,
            adapted_layers: crate::compose::adapted_layer_count(12, 0.2),
            token_count: 197,
            head_classes: 5,
            base_params: 5_540_000,
            base_macs: 1_079_390_000,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "deit-tiny" | "deit_tiny" => Some(Self::deit_tiny()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let positive = [
            ("layers", self.layers),
            ("hidden_dim", self.hidden_dim),
            ("lora_rank", self.lora_rank),
            ("token_count", self.token_count),
        ];
        if let Some((field, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(CostError::Arch(format!("{field} must be positive")));
        }
        if self.lora_rank > self.hidden_dim {
            return Err(CostError::Arch(format!(
                "lora_rank {} exceeds hidden_dim {}",
                self.lora_rank, self.hidden_dim
            )));
        }
        if self.adapted_layers > self.layers {
            return Err(CostError::Arch(format!(
                "adapted_layers {} exceeds layers {}",
                self.adapted_layers, self.layers
            )));
        }
        Ok(())
    }
}

/// MACs one adapter adds per forward pass: `n·L_a·p·r·(d + d)`, each
/// projection computing `(xA)B` unmerged.
pub fn adapter_mac_overhead(arch: &ArchParams) -> Result<u64, CostError> {
    arch.validate()?;
    let d = arch.hidden_dim as u64;
    Ok(arch.token_count as u64
        * arch.adapted_layers as u64
        * arch.adapted_projections as u64
        * arch.lora_rank as u64
        * (d + d))
}

/// Trainable parameters per adapter: the `A` and `B` factors of every adapted
/// projection plus a linear head with bias.
pub fn adapter_param_count(arch: &ArchParams) -> Result<u64, CostError> {
    arch.validate()?;
    let d = arch.hidden_dim as u64;
    let lora = arch.adapted_layers as u64 * arch.adapted_projections as u64 * 2 * d * arch.lora_rank as u64;
    Ok(lora + arch.head_classes as u64 * (d + 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub base_latency_ms: f64,
    pub per_adapter_latency_ms: f64,
    pub base_power_w: f64,
    pub per_adapter_power_w: f64,
    pub switch_cost_ms: f64,
    pub fps: f64,
}

impl CostParams {
    pub fn validate(&self) -> Result<(), CostError> {
        let fields = [
            ("base_latency_ms", self.base_latency_ms),
            ("per_adapter_latency_ms", self.per_adapter_latency_ms),
            ("base_power_w", self.base_power_w),
            ("per_adapter_power_w", self.per_adapter_power_w),
            ("switch_cost_ms", self.switch_cost_ms),
        ];
        if let Some((field, v)) = fields.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(CostError::Cost(format!("{field} = {v} must be finite and non-negative")));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(CostError::Cost(format!("fps = {} must be positive", self.fps)));
        }
        Ok(())
    }
}

/// A fixed measured operating point of some deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    pub latency_ms: f64,
    pub power_w: f64,
}

/// A reference row of published size figures, shown next to computed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedRow {
    pub name: String,
    pub params_m: f64,
    pub memory_mb: f64,
    pub macs_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub source: String,
    pub cost: CostParams,
    pub arch: ArchParams,
    #[serde(default)]
    pub profiles: Vec<Profile>,
    #[serde(default)]
    pub published_rows: Vec<PublishedRow>,
}

impl Calibration {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_CALIBRATION).expect("builtin calibration is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, CostError> {
        let cal: Self = serde_json::from_str(text)?;
        cal.cost.validate()?;
        cal.arch.validate()?;
        Ok(cal)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration serializes")
    }

    pub fn profile(&self, name: &str) -> Result<&Profile, CostError> {
        self.profiles
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| CostError::UnknownProfile(name.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameCost {
    pub t: usize,
    pub active: usize,
    pub latency_ms: f64,
    pub power_w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub frames: usize,
    pub mean_active: f64,
    pub mean_latency_ms: f64,
    pub mean_power_w: f64,
    /// Mean power over one frame period, in joules.
    pub energy_per_frame_j: f64,
    pub total_energy_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub frames: Vec<FrameCost>,
    pub summary: CostSummary,
}

/// Per-frame cost of a trace under the linear model. Frames are paced at
/// `fps`, so each frame's energy is its power times `1/fps` seconds.
pub fn estimate_latency_power(trace: &SelectionTrace, cost: &CostParams) -> CostEstimate {
    let frames: Vec<FrameCost> = trace
        .frames
        .iter()
        .map(|f| {
            let k = f.selected.len() as f64;
            let switch = if f.changed { cost.switch_cost_ms } else { 0.0 };
            FrameCost {
                t: f.t,
                active: f.selected.len(),
                latency_ms: cost.base_latency_ms + k * cost.per_adapter_latency_ms + switch,
                power_w: cost.base_power_w + k * cost.per_adapter_power_w,
            }
        })
        .collect();
    let n = frames.len();
    let mean = |f: fn(&FrameCost) -> f64| {
        if n == 0 {
            0.0
        } else {
            frames.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let mean_power_w = mean(|f| f.power_w);
    let summary = CostSummary {
        frames: n,
        mean_active: mean(|f| f.active as f64),
        mean_latency_ms: mean(|f| f.latency_ms),
        mean_power_w,
        energy_per_frame_j: mean_power_w / cost.fps,
        total_energy_j: frames.iter().map(|f| f.power_w).sum::<f64>() / cost.fps,
    };
    CostEstimate { frames, summary }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileComparison {
    pub profile: String,
    pub power_ratio: f64,
    pub latency_ratio: f64,
    /// Equal to `power_ratio` at a shared frame rate.
    pub energy_ratio: f64,
}

pub fn compare_profile(summary: &CostSummary, profile: &Profile) -> ProfileComparison {
    let power_ratio = summary.mean_power_w / profile.power_w;
    ProfileComparison {
        profile: profile.name.clone(),
        power_ratio,
        latency_ratio: summary.mean_latency_ms / profile.latency_ms,
        energy_ratio: power_ratio,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub name: String,
    pub params: u64,
    pub params_m: f64,
    /// `params × 4` bytes in units of 10⁶ bytes.
    pub memory_mb: f64,
    /// The same byte count in units of 2²⁰ bytes.
    pub memory_mib: f64,
    pub macs: u64,
    pub macs_m: f64,
}

impl SizeRow {
    fn new(name: &str, params: u64, macs: u64) -> Self {
        let bytes = (params * BYTES_PER_PARAM) as f64;
        Self {
            name: name.into(),
            params,
            params_m: params as f64 / 1e6,
            memory_mb: bytes / 1e6,
            memory_mib: bytes / (1u64 << 20) as f64,
            macs,
            macs_m: macs as f64 / 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub tool_version: String,
    pub calibration_source: String,
    pub arch: ArchParams,
    pub contexts: usize,
    pub adapter_mac_overhead: u64,
    pub adapter_params: u64,
    pub catalog_param_overhead: u64,
    /// Base model, then base plus the catalog's adapters (MACs with one adapter active).
    pub rows: Vec<SizeRow>,
    pub published_rows: Vec<PublishedRow>,
    /// Set when computed memory in MB disagrees with the published figure by more than 1%.
    pub memory_discrepancy: bool,
    pub memory_note: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_cost: Option<CostSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comparisons: Vec<ProfileComparison>,
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs()
}

pub fn profile_report(
    arch: &ArchParams,
    contexts: usize,
    trace: Option<&SelectionTrace>,
    calibration: &Calibration,
) -> Result<ProfileReport, CostError> {
    calibration.cost.validate()?;
    let mac = adapter_mac_overhead(arch)?;
    let per_adapter = adapter_param_count(arch)?;
    let overhead = per_adapter * contexts as u64;
    let mut rows = vec![SizeRow::new("base", arch.base_params, arch.base_macs)];
    if contexts > 0 {
        rows.push(SizeRow::new("base+catalog", arch.base_params + overhead, arch.base_macs + mac));
    }

    let base = &rows[0];
    let published = calibration.published_rows.iter().find(|r| r.name == "base");
    let (memory_discrepancy, memory_note) = match published {
        Some(p) if !close(base.memory_mb, p.memory_mb, 0.01) => {
            let unit = if close(base.memory_mib, p.memory_mb, 0.01) { "MiB (2^20 bytes)" } else { "no tested unit" };
            (
                true,
                format!(
                    "computed {:.2} MB vs published {:.2}; published figure matches {unit}, computed {:.2} MiB",
                    base.memory_mb, p.memory_mb, base.memory_mib
                ),
            )
        }
        Some(p) => (false, format!("computed {:.2} MB agrees with published {:.2}", base.memory_mb, p.memory_mb)),
        None => (false, "no published memory figure".into()),
    };

    let trace_cost = trace.map(|t| estimate_latency_power(t, &calibration.cost).summary);
    let comparisons = trace_cost
        .map(|s| calibration.profiles.iter().map(|p| compare_profile(&s, p)).collect())
        .unwrap_or_default();
    Ok(ProfileReport {
        tool_version: crate::TOOL_VERSION.to_string(),
        calibration_source: calibration.source.clone(),
        arch: arch.clone(),
        contexts,
        adapter_mac_overhead: mac,
        adapter_params: per_adapter,
        catalog_param_overhead: overhead,
        rows,
        published_rows: calibration.published_rows.clone(),
        memory_discrepancy,
        memory_note,
        trace_cost,
        comparisons,
    })
}
