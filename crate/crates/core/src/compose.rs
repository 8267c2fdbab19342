//! Dense low-rank adapter composition.
//!
//! A frozen weight `W (h×d)` with adapters `A_i (h×r_i)`, `B_i (r_i×d)` can be
//! applied merged, `x(W + Σ A_i B_i)`, or unmerged, `xW + Σ (xA_i)B_i`. The
//! unmerged form lets several adapters share one backbone pass; a
//! [`LayerStack`] goes further and runs the unadapted prefix once, then the
//! adapted suffix once per active context.
//!
//! All products report their multiply-accumulate count so the cost model can be
//! checked against real execution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{Real, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ComposeError {
    #[error("matrix dimensions must be positive, got {rows}×{cols}")]
    EmptyDimension { rows: usize, cols: usize },
    #[error("expected {expected} values for the given shape, got {actual}")]
    DataLength { expected: usize, actual: usize },
    #[error("non-finite matrix entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: {0}")]
    Mismatch(String),
    #[error("adapter rank {rank} must be between 1 and min(h, d) = {limit}")]
    Rank { rank: usize, limit: usize },
    #[error("adapted fraction {0} outside [0, 1]")]
    Fraction(f64),
    #[error("adapter attached to layer {layer}, outside the adapted suffix {first}..{layers}")]
    OutsideSuffix { layer: usize, first: usize, layers: usize },
}

/// Row-major dense matrix with positive dimensions and finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, ComposeError> {
        if rows == 0 || cols == 0 {
            return Err(ComposeError::EmptyDimension { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(ComposeError::DataLength { expected: rows * cols, actual: data.len() });
        }
        if let Some(i) = data.iter().position(|v| !v.to_f64_lossy().is_finite()) {
            return Err(ComposeError::NonFinite { row: i / cols, col: i % cols });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, ComposeError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(ComposeError::Mismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self, ComposeError> {
        Self::new(rows, cols, vec![T::zero(); rows * cols])
    }

    pub fn identity(n: usize) -> Result<Self, ComposeError> {
        let mut m = Self::zeros(n, n)?;
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols + col]
    }

    /// Product and its multiply-accumulate count `rows·inner·cols`.
    pub fn matmul(&self, rhs: &Self) -> Result<(Self, u64), ComposeError> {
        if self.cols != rhs.rows {
            return Err(ComposeError::Mismatch(format!(
                "{}×{} times {}×{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let (m, k, n) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                let rhs_row = &rhs.data[p * n..(p + 1) * n];
                for (o, &b) in row.iter_mut().zip(rhs_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok((Self { rows: m, cols: n, data: out }, (m * k * n) as u64))
    }

    pub fn add(&self, rhs: &Self) -> Result<Self, ComposeError> {
        if (self.rows, self.cols) != (rhs.rows, rhs.cols) {
            return Err(ComposeError::Mismatch(format!(
                "{}×{} plus {}×{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }
}

impl<T: Real> DenseMatrix<T> {
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// `‖reference − other‖_∞ / ‖reference‖_∞`, or the plain absolute deviation
/// when the reference is zero.
pub fn max_relative_error<T: Real>(reference: &DenseMatrix<T>, other: &DenseMatrix<T>) -> T {
    assert_eq!((reference.rows, reference.cols), (other.rows, other.cols), "shape mismatch");
    let diff = reference
        .data
        .iter()
        .zip(&other.data)
        .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
    let scale = reference.max_abs();
    if scale > T::zero() {
        diff / scale
    } else {
        diff
    }
}

/// Low-rank factors `A (h×r)` and `B (r×d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair<T> {
    a: DenseMatrix<T>,
    b: DenseMatrix<T>,
}

impl<T: Scalar> LoraPair<T> {
    pub fn new(a: DenseMatrix<T>, b: DenseMatrix<T>) -> Result<Self, ComposeError> {
        if a.cols != b.rows {
            return Err(ComposeError::Mismatch(format!(
                "A is {}×{} but B is {}×{}",
                a.rows, a.cols, b.rows, b.cols
            )));
        }
        let limit = a.rows.min(b.cols);
        if a.cols > limit {
            return Err(ComposeError::Rank { rank: a.cols, limit });
        }
        Ok(Self { a, b })
    }

    /// Builds from raw row-major factor data; a zero rank is rejected.
    pub fn from_parts(h: usize, d: usize, rank: usize, a: Vec<T>, b: Vec<T>) -> Result<Self, ComposeError> {
        if rank == 0 {
            return Err(ComposeError::Rank { rank, limit: h.min(d) });
        }
        Self::new(DenseMatrix::new(h, rank, a)?, DenseMatrix::new(rank, d, b)?)
    }

    pub fn a(&self) -> &DenseMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DenseMatrix<T> {
        &self.b
    }

    pub fn rank(&self) -> usize {
        self.a.cols
    }

    pub fn in_dim(&self) -> usize {
        self.a.rows
    }

    pub fn out_dim(&self) -> usize {
        self.b.cols
    }

    /// `A·B`, the dense update.
    pub fn delta(&self) -> DenseMatrix<T> {
        self.a.matmul(&self.b).expect("inner dimensions checked at construction").0
    }

    /// MACs of the unmerged term `(xA)B` for `tokens` input rows.
    pub fn unmerged_macs(&self, tokens: usize) -> u64 {
        (tokens * self.rank() * (self.in_dim() + self.out_dim())) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward<T> {
    pub output: DenseMatrix<T>,
    pub macs: u64,
}

fn check_adapters<T: Scalar>(w: &DenseMatrix<T>, adapters: &[LoraPair<T>]) -> Result<(), ComposeError> {
    for (i, ad) in adapters.iter().enumerate() {
        if (ad.in_dim(), ad.out_dim()) != (w.rows, w.cols) {
            return Err(ComposeError::Mismatch(format!(
                "adapter {i} maps {}→{} but W is {}×{}",
                ad.in_dim(),
                ad.out_dim(),
                w.rows,
                w.cols
            )));
        }
    }
    Ok(())
}

/// `xW + Σ (xA_i)B_i` without touching `W`.
pub fn forward_unmerged<T: Scalar>(
    x: &DenseMatrix<T>,
    w: &DenseMatrix<T>,
    adapters: &[LoraPair<T>],
) -> Result<Forward<T>, ComposeError> {
    check_adapters(w, adapters)?;
    let (mut out, mut macs) = x.matmul(w)?;
    for ad in adapters {
        let (xa, m1) = x.matmul(&ad.a)?;
        let (xab, m2) = xa.matmul(&ad.b)?;
        out = out.add(&xab)?;
        macs += m1 + m2;
    }
    Ok(Forward { output: out, macs })
}

/// `x(W + Σ A_i B_i)`; the reported MACs include materializing the merged weight.
pub fn forward_merged<T: Scalar>(
    x: &DenseMatrix<T>,
    w: &DenseMatrix<T>,
    adapters: &[LoraPair<T>],
) -> Result<Forward<T>, ComposeError> {
    check_adapters(w, adapters)?;
    let mut merged = w.clone();
    let mut macs = 0;
    for ad in adapters {
        let (delta, m) = ad.a.matmul(&ad.b)?;
        merged = merged.add(&delta)?;
        macs += m;
    }
    let (out, m) = x.matmul(&merged)?;
    Ok(Forward { output: out, macs: macs + m })
}

/// Chain of linear layers; adapters may attach only to the final
/// [`adapted_layer_count`](Self::adapted_layer_count) layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack<T> {
    layers: Vec<DenseMatrix<T>>,
    adapted_fraction: f64,
}

/// Adapters one context attaches, as `(layer index, adapter)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextAdapters<T> {
    pub attachments: Vec<(usize, LoraPair<T>)>,
}

impl<T> Default for ContextAdapters<T> {
    fn default() -> Self {
        Self { attachments: Vec::new() }
    }
}

impl<T: Scalar> ContextAdapters<T> {
    pub fn on_layer(&self, layer: usize) -> Vec<LoraPair<T>> {
        self.attachments.iter().filter(|(l, _)| *l == layer).map(|(_, a)| a.clone()).collect()
    }

    /// Total unmerged low-rank MACs for `tokens` input rows.
    pub fn unmerged_macs(&self, tokens: usize) -> u64 {
        self.attachments.iter().map(|(_, a)| a.unmerged_macs(tokens)).sum()
    }
}

/// Adapted layer count for `layers` layers at fraction `f`: `floor(f·L)`,
/// at least one layer whenever `f > 0`.
pub fn adapted_layer_count(layers: usize, fraction: f64) -> usize {
    if fraction <= 0.0 || layers == 0 {
        return 0;
    }
    // The epsilon absorbs representation error such as 0.2 * 10 = 1.9999...
    let floor = (fraction * layers as f64 + 1e-9).floor() as usize;
    floor.clamp(1, layers)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedOutput<T> {
    /// Output without any adapter.
    pub base: DenseMatrix<T>,
    /// One output per context, in input order.
    pub per_context: Vec<DenseMatrix<T>>,
    pub macs: u64,
}

impl<T: Scalar> LayerStack<T> {
    pub fn new(layers: Vec<DenseMatrix<T>>, adapted_fraction: f64) -> Result<Self, ComposeError> {
        if !(0.0..=1.0).contains(&adapted_fraction) {
            return Err(ComposeError::Fraction(adapted_fraction));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].cols != pair[1].rows {
                return Err(ComposeError::Mismatch(format!(
                    "layer {i} outputs {} features but layer {} expects {}",
                    pair[0].cols,
                    i + 1,
                    pair[1].rows
                )));
            }
        }
        Ok(Self { layers, adapted_fraction })
    }

    pub fn layers(&self) -> &[DenseMatrix<T>] {
        &self.layers
    }

    pub fn adapted_layer_count(&self) -> usize {
        adapted_layer_count(self.layers.len(), self.adapted_fraction)
    }

    /// Index of the first layer in the adapted suffix.
    pub fn first_adapted(&self) -> usize {
        self.layers.len() - self.adapted_layer_count()
    }

    fn check_context(&self, ctx: &ContextAdapters<T>) -> Result<(), ComposeError> {
        let first = self.first_adapted();
        for (layer, ad) in &ctx.attachments {
            if *layer < first || *layer >= self.layers.len() {
                return Err(ComposeError::OutsideSuffix { layer: *layer, first, layers: self.layers.len() });
            }
            check_adapters(&self.layers[*layer], std::slice::from_ref(ad))?;
        }
        Ok(())
    }

    fn run(&self, x: &DenseMatrix<T>, range: std::ops::Range<usize>, ctx: Option<&ContextAdapters<T>>) -> Result<Forward<T>, ComposeError> {
        let mut h = x.clone();
        let mut macs = 0;
        for layer in range {
            let adapters = ctx.map(|c| c.on_layer(layer)).unwrap_or_default();
            let f = forward_unmerged(&h, &self.layers[layer], &adapters)?;
            h = f.output;
            macs += f.macs;
        }
        Ok(Forward { output: h, macs })
    }

    /// Whole stack with one context's adapters, no sharing.
    pub fn forward_with(&self, x: &DenseMatrix<T>, ctx: &ContextAdapters<T>) -> Result<Forward<T>, ComposeError> {
        self.check_context(ctx)?;
        self.run(x, 0..self.layers.len(), Some(ctx))
    }

    /// Runs the prefix once, then the suffix for the base model and for each context.
    pub fn stacked_forward(
        &self,
        x: &DenseMatrix<T>,
        contexts: &[ContextAdapters<T>],
    ) -> Result<StackedOutput<T>, ComposeError> {
        for ctx in contexts {
            self.check_context(ctx)?;
        }
        let first = self.first_adapted();
        let n = self.layers.len();
        let prefix = self.run(x, 0..first, None)?;
        let base = self.run(&prefix.output, first..n, None)?;
        let mut macs = prefix.macs + base.macs;
        let mut per_context = Vec::with_capacity(contexts.len());
        for ctx in contexts {
            let f = self.run(&prefix.output, first..n, Some(ctx))?;
            macs += f.macs;
            per_context.push(f.output);
        }
        Ok(StackedOutput { base: base.output, per_context, macs })
    }

    /// MACs of the adapted suffix without adapters, for `tokens` rows.
    pub fn suffix_base_macs(&self, tokens: usize) -> u64 {
        self.layers[self.first_adapted()..]
            .iter()
            .map(|w| (tokens * w.rows * w.cols) as u64)
            .sum()
    }
}

/// Parameters of a seeded randomized check of the composition identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheckConfig {
    pub instances: usize,
    /// Upper bound on `h` and `d`.
    pub max_dim: usize,
    pub max_rank: usize,
    pub max_adapters: usize,
    pub seed: u64,
}

impl Default for IdentityCheckConfig {
    fn default() -> Self {
        Self { instances: 1000, max_dim: 64, max_rank: 8, max_adapters: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheckReport {
    pub instances: usize,
    /// Largest merged-vs-unmerged relative error.
    pub max_merge_error: f64,
    /// Largest stacked-vs-independent relative error over all contexts.
    pub max_stack_error: f64,
    pub unmerged_macs: u64,
    pub merged_macs: u64,
    pub stacked_macs: u64,
    /// MACs of running every context through the whole stack separately.
    pub independent_macs: u64,
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix<f64> {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DenseMatrix::new(rows, cols, data).expect("positive dimensions")
}

fn random_lora(rng: &mut ChaCha8Rng, h: usize, d: usize, max_rank: usize) -> LoraPair<f64> {
    let r = rng.gen_range(1..=max_rank.min(h).min(d).max(1));
    LoraPair::new(random_matrix(rng, h, r), random_matrix(rng, r, d)).expect("rank within bounds")
}

/// Random single-layer merge checks plus, per instance, a small random stack
/// comparing the shared-prefix forward with independent per-context forwards.
pub fn identity_check(config: &IdentityCheckConfig) -> IdentityCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let max_dim = config.max_dim.max(1);
    let mut report = IdentityCheckReport {
        instances: config.instances,
        max_merge_error: 0.0,
        max_stack_error: 0.0,
        unmerged_macs: 0,
        merged_macs: 0,
        stacked_macs: 0,
        independent_macs: 0,
    };
    for _ in 0..config.instances {
        let (h, d) = (rng.gen_range(1..=max_dim), rng.gen_range(1..=max_dim));
        let n = rng.gen_range(1..=4);
        let x = random_matrix(&mut rng, n, h);
        let w = random_matrix(&mut rng, h, d);
        let k = rng.gen_range(0..=config.max_adapters);
        let adapters: Vec<_> = (0..k).map(|_| random_lora(&mut rng, h, d, config.max_rank)).collect();
        let u = forward_unmerged(&x, &w, &adapters).expect("shapes agree");
        let m = forward_merged(&x, &w, &adapters).expect("shapes agree");
        report.max_merge_error = report.max_merge_error.max(max_relative_error(&m.output, &u.output));
        report.unmerged_macs += u.macs;
        report.merged_macs += m.macs;

        let layers = rng.gen_range(1..=10);
        let width = rng.gen_range(1..=max_dim.min(16));
        let stack = LayerStack::new(
            (0..layers).map(|_| random_matrix(&mut rng, width, width)).collect(),
            rng.gen_range(0.0..=1.0),
        )
        .expect("square chain");
        let first = stack.first_adapted();
        let contexts: Vec<ContextAdapters<f64>> = (0..rng.gen_range(0..=3))
            .map(|_| {
                let attachments = if first == layers {
                    Vec::new()
                } else {
                    (0..rng.gen_range(1..=config.max_adapters.max(1)))
                        .map(|_| (rng.gen_range(first..layers), random_lora(&mut rng, width, width, config.max_rank)))
                        .collect()
                };
                ContextAdapters { attachments }
            })
            .collect();
        let xs = random_matrix(&mut rng, n, width);
        let out = stack.stacked_forward(&xs, &contexts).expect("adapters within suffix");
        report.stacked_macs += out.macs;
        for (ctx, got) in contexts.iter().zip(&out.per_context) {
            let alone = stack.forward_with(&xs, ctx).expect("adapters within suffix");
            report.independent_macs += alone.macs;
            report.max_stack_error = report.max_stack_error.max(max_relative_error(&alone.output, got));
        }
    }
    report
}
