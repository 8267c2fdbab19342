//! Cross-product parameter sweeps over one stream.
//!
//! Catalogs are built once per `(B, M_max, variant)` and every
//! `(τ, policy)` cell replays the stream against its catalog. Cells run on a
//! rayon pool; rows come back in grid order whatever the completion order.

use std::fmt::Write as _;

use rayon::prelude::*;

use ctxsched::catalog::valid_labels;
use ctxsched::cost::{estimate_latency_power, CostParams};
use ctxsched::metrics::{
    avg_coverage, coverage_violations, coverage_weighted_score, intra_coherence, switch_cost_symdiff, switch_penalty,
};
use ctxsched::oracle::{per_frame_oracle_trace, sequence_oracle, OracleConfig};
use ctxsched::{
    build_contexts, run_simulation, AccuracyModel, AccuracyTable, BuildVariant, ContextCatalog, Cooccurrence,
    DetectorConfig, LabelStream, PolicyTag, SelectionTrace, UncoverablePolicy, Variant,
};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub budgets: Vec<usize>,
    pub max_contexts: Vec<usize>,
    pub variants: Vec<Variant>,
    pub taus: Vec<f64>,
    pub policies: Vec<PolicyTag>,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<(), CliError> {
        let empty = [
            ("B", self.budgets.is_empty()),
            ("M_max", self.max_contexts.is_empty()),
            ("variants", self.variants.is_empty()),
            ("tau", self.taus.is_empty()),
            ("policies", self.policies.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(CliError::Usage(format!("sweep grid is empty: no {name} values")));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.budgets.len() * self.max_contexts.len() * self.variants.len() * self.taus.len() * self.policies.len()
    }
}

pub struct SweepInputs<'a> {
    pub truth: &'a LabelStream,
    pub pred: &'a LabelStream,
    pub accuracy: AccuracyModel,
    pub cost: CostParams,
    pub min_frequency: f64,
    pub oracle: OracleConfig,
    /// Shuffle seed of the basic variant.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CellMetrics {
    pub contexts: usize,
    pub intra_coherence: f64,
    pub intra_coherence_raw: f64,
    pub avg_coverage: f64,
    pub switch_penalty: usize,
    pub switch_cost_symdiff: usize,
    pub coverage_weighted_score: f64,
    pub uncovered_label_frames: usize,
    pub coverage_violations: usize,
    pub mean_latency_ms: f64,
    pub mean_power_w: f64,
    pub energy_per_frame_j: f64,
    pub total_energy_j: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub budget: usize,
    pub max_contexts: usize,
    pub variant: Variant,
    pub tau: f64,
    pub policy: PolicyTag,
    pub outcome: Result<CellMetrics, String>,
}

const HEADER: &str = "B,M_max,variant,tau,policy,contexts,intra_coherence,intra_coherence_raw,avg_coverage,\
switch_penalty,switch_cost_symdiff,coverage_weighted_score,uncovered_label_frames,coverage_violations,\
mean_latency_ms,mean_power_w,energy_per_frame_j,total_energy_j,error";

struct BuiltCatalog {
    catalog: Result<(ContextCatalog, AccuracyTable), String>,
}

fn build_one(
    matrix: &Cooccurrence,
    inputs: &SweepInputs<'_>,
    budget: usize,
    max_contexts: usize,
    variant: Variant,
) -> BuiltCatalog {
    let valid = valid_labels(matrix, inputs.min_frequency);
    let catalog = build_contexts(matrix, &valid, budget, max_contexts, BuildVariant::from_variant(variant, inputs.seed))
        .map_err(|e| e.to_string())
        .and_then(|c| {
            let acc = AccuracyTable::from_model(&c, &inputs.accuracy).map_err(|e| e.to_string())?;
            Ok((c, acc))
        });
    BuiltCatalog { catalog }
}

fn run_cell(
    matrix: &Cooccurrence,
    inputs: &SweepInputs<'_>,
    catalog: &ContextCatalog,
    accuracy: &AccuracyTable,
    tau: f64,
    policy: PolicyTag,
) -> Result<CellMetrics, String> {
    let trace: SelectionTrace = match policy {
        PolicyTag::Greedy | PolicyTag::GreedyCopy => {
            let config = DetectorConfig::new(tau, policy == PolicyTag::GreedyCopy).map_err(|e| e.to_string())?;
            run_simulation(inputs.truth, inputs.pred, catalog, accuracy, &config).map_err(|e| e.to_string())?
        }
        PolicyTag::OraclePerFrame => {
            per_frame_oracle_trace(inputs.truth, catalog, accuracy, tau, UncoverablePolicy::BestEffort)
                .map_err(|e| e.to_string())?
        }
        PolicyTag::OracleSequence => {
            sequence_oracle(inputs.truth, catalog, accuracy, tau, &inputs.oracle).map_err(|e| e.to_string())?
        }
    };
    let score = coverage_weighted_score(&trace, accuracy, catalog);
    let cost = estimate_latency_power(&trace, &inputs.cost).summary;
    Ok(CellMetrics {
        contexts: catalog.len(),
        intra_coherence: intra_coherence(catalog, matrix).map_err(|e| e.to_string())?,
        intra_coherence_raw: intra_coherence(catalog, &matrix.raw_counts()).map_err(|e| e.to_string())?,
        avg_coverage: avg_coverage(&trace).map_err(|e| e.to_string())?,
        switch_penalty: switch_penalty(&trace),
        switch_cost_symdiff: switch_cost_symdiff(&trace),
        coverage_weighted_score: score.score,
        uncovered_label_frames: score.uncovered_label_frames,
        coverage_violations: coverage_violations(&trace, catalog, accuracy, tau).len(),
        mean_latency_ms: cost.mean_latency_ms,
        mean_power_w: cost.mean_power_w,
        energy_per_frame_j: cost.energy_per_frame_j,
        total_energy_j: cost.total_energy_j,
    })
}

/// Runs every grid cell. A failing cell is reported in its row; only an
/// invalid grid or a thread-pool failure aborts the sweep.
pub fn run_sweep(grid: &SweepGrid, inputs: &SweepInputs<'_>, jobs: Option<usize>) -> Result<Vec<SweepRow>, CliError> {
    grid.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        pool = pool.num_threads(n.max(1));
    }
    let pool = pool.build().map_err(|e| CliError::Internal(e.to_string()))?;
    let matrix = Cooccurrence::build(inputs.truth);

    let catalog_keys: Vec<(usize, usize, Variant)> = grid
        .budgets
        .iter()
        .flat_map(|&b| grid.max_contexts.iter().flat_map(move |&m| grid.variants.iter().map(move |&v| (b, m, v))))
        .collect();
    let cells: Vec<(usize, f64, PolicyTag)> = (0..catalog_keys.len())
        .flat_map(|k| grid.taus.iter().flat_map(move |&tau| grid.policies.iter().map(move |&p| (k, tau, p))))
        .collect();

    let rows = pool.install(|| {
        let built: Vec<BuiltCatalog> =
            catalog_keys.par_iter().map(|&(b, m, v)| build_one(&matrix, inputs, b, m, v)).collect();
        cells
            .par_iter()
            .map(|&(k, tau, policy)| {
                let (budget, max_contexts, variant) = catalog_keys[k];
                let outcome = match &built[k].catalog {
                    Ok((catalog, accuracy)) => run_cell(&matrix, inputs, catalog, accuracy, tau, policy),
                    Err(e) => Err(e.clone()),
                };
                SweepRow { budget, max_contexts, variant, tau, policy, outcome }
            })
            .collect()
    });
    Ok(rows)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{},{},{},", r.budget, r.max_contexts, r.variant, r.tau, r.policy);
        match &r.outcome {
            Ok(m) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},",
                    m.contexts,
                    m.intra_coherence,
                    m.intra_coherence_raw,
                    m.avg_coverage,
                    m.switch_penalty,
                    m.switch_cost_symdiff,
                    m.coverage_weighted_score,
                    m.uncovered_label_frames,
                    m.coverage_violations,
                    m.mean_latency_ms,
                    m.mean_power_w,
                    m.energy_per_frame_j,
                    m.total_energy_j
                );
            }
            Err(e) => {
                let _ = writeln!(out, ",,,,,,,,,,,,,{}", csv_field(e));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ctxsched::stream::generate_synthetic_stream;
    use ctxsched::SyntheticConfig;

    fn grid() -> SweepGrid {
        SweepGrid {
            budgets: vec![2, 5, 15],
            max_contexts: vec![20],
            variants: Variant::ALL.to_vec(),
            taus: vec![0.5],
            policies: vec![PolicyTag::Greedy],
        }
    }

    fn inputs(stream: &LabelStream) -> SweepInputs<'_> {
        SweepInputs {
            truth: stream,
            pred: stream,
            accuracy: AccuracyModel::default(),
            cost: ctxsched::cost::Calibration::builtin().cost,
            min_frequency: 0.0,
            oracle: OracleConfig::default(),
            seed: 1,
        }
    }

    #[test]
    fn nine_clustering_rows() {
        let s = generate_synthetic_stream(&SyntheticConfig::new(20, 200, 2.0, 3).with_uniform_clusters(4, 5)).unwrap();
        let rows = run_sweep(&grid(), &inputs(&s), Some(2)).unwrap();
        assert_eq!(rows.len(), 9);
        assert!(rows.iter().all(|r| r.outcome.is_ok()));
        assert_eq!(rows_to_csv(&rows).lines().count(), 10);
    }

    #[test]
    fn empty_grid_rejected() {
        let s = LabelStream::empty(3);
        let g = SweepGrid { taus: vec![], ..grid() };
        assert!(matches!(run_sweep(&g, &inputs(&s), None), Err(CliError::Usage(_))));
    }

    #[test]
    fn failing_cell_recorded_in_row() {
        let s = generate_synthetic_stream(&SyntheticConfig::new(20, 200, 2.0, 3)).unwrap();
        let g = SweepGrid { budgets: vec![1], max_contexts: vec![2], ..grid() };
        let rows = run_sweep(&g, &inputs(&s), None).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.outcome.is_err()));
        let csv = rows_to_csv(&rows);
        assert!(csv.lines().nth(1).unwrap().contains("infeasible"));
    }

    #[test]
    fn order_independent_of_jobs() {
        let s = generate_synthetic_stream(&SyntheticConfig::new(20, 300, 2.0, 9).with_uniform_clusters(4, 5)).unwrap();
        let g = SweepGrid {
            policies: vec![PolicyTag::Greedy, PolicyTag::GreedyCopy, PolicyTag::OraclePerFrame],
            taus: vec![0.5, 0.85],
            ..grid()
        };
        let one = rows_to_csv(&run_sweep(&g, &inputs(&s), Some(1)).unwrap());
        let many = rows_to_csv(&run_sweep(&g, &inputs(&s), Some(4)).unwrap());
        assert_eq!(one, many);
    }
}
