//! Context-aware adapter scheduling for multi-label video streams.
//!
//! The crate covers the whole offline toolchain:
//!
//! - [`stream`]: label streams, annotation I/O, seeded synthetic streams and
//!   prediction noise.
//! - [`cooccurrence`]: frame-normalized label co-occurrence.
//! - [`catalog`]: greedy context construction (basic, non-overlapping,
//!   overlapping) with uncovered-label repair and validation.
//! - [`detector`]: per-frame greedy context detection with conditional context
//!   copy, and full-stream simulation into a [`trace::SelectionTrace`].
//! - [`oracle`]: exact per-frame minimum cover and the temporally coupled
//!   sequence optimum (bitmask dynamic programming).
//! - [`metrics`]: IntraCoherence, AvgCoverage, SwitchPenalty, symmetric
//!   difference switching cost and a coverage-weighted accuracy proxy.
//! - [`compose`]: dense low-rank adapter composition kernel (merged,
//!   unmerged and shared-prefix stacked forwards).
//! - [`cost`]: parameter/MAC accounting and calibrated latency/power/energy.
//!
//! Numeric kernels are generic over [`Scalar`]; the aliases below pin the
//! common instantiations.

pub mod accuracy;
pub mod catalog;
pub mod compose;
pub mod cooccurrence;
pub mod cost;
pub mod detector;
pub mod digest;
pub mod metrics;
pub mod oracle;
pub mod scalar;
pub mod stream;
pub mod trace;

pub use num_rational::Rational64;

pub use accuracy::{AccuracyModel, AccuracyTable};
pub use catalog::{
    build_contexts, repair_uncovered, validate_catalog, BuildVariant, CatalogError, Context,
    ContextCatalog, ContextId, Variant,
};
pub use cooccurrence::CooccurrenceMatrix;
pub use detector::{detect_contexts, run_simulation, DetectError, DetectorConfig, UncoverablePolicy};
pub use oracle::{per_frame_min_cover, sequence_oracle, OracleConfig, OracleMode};
pub use scalar::{Real, Scalar};
pub use stream::{Frame, Label, LabelSet, LabelStream, NoiseConfig, StreamError, SyntheticConfig};
pub use trace::{PolicyTag, SelectionTrace, TraceFrame};

/// Double-precision co-occurrence matrix, the default for catalogs and reports.
pub type Cooccurrence = CooccurrenceMatrix<f64>;
/// Single-precision co-occurrence matrix.
pub type Cooccurrence32 = CooccurrenceMatrix<f32>;
/// Exact rational co-occurrence matrix (values are `count / T`).
pub type ExactCooccurrence = CooccurrenceMatrix<Rational64>;

/// Double-precision dense matrix.
pub type Matrix = compose::DenseMatrix<f64>;
/// Single-precision dense matrix.
pub type Matrix32 = compose::DenseMatrix<f32>;
/// Exact rational dense matrix; merged and unmerged forwards agree bit-for-bit.
pub type ExactMatrix = compose::DenseMatrix<Rational64>;

/// Double-precision low-rank adapter.
pub type Lora = compose::LoraPair<f64>;
/// Double-precision layer stack.
pub type Stack = compose::LayerStack<f64>;

/// Version string embedded into every report.
pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
