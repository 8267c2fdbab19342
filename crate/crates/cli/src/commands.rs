use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use serde_json::json;

use ctxsched::catalog::valid_labels;
use ctxsched::compose::{identity_check, IdentityCheckConfig};
use ctxsched::cost::{compare_profile, estimate_latency_power, profile_report, ArchParams, Calibration};
use ctxsched::metrics::{avg_coverage, coverage_violations, metrics_report, switch_penalty};
use ctxsched::oracle::{run_oracle, OracleConfig, OracleMode};
use ctxsched::stream::{
    apply_prediction_noise, generate_synthetic_stream, parse_stream, to_csv, to_jsonl, LoadOptions, StreamFormat,
};
use ctxsched::{
    build_contexts, run_simulation, AccuracyModel, AccuracyTable, BuildVariant, ContextCatalog, Cooccurrence,
    DetectorConfig, Label, LabelStream, NoiseConfig, PolicyTag, SelectionTrace, SyntheticConfig, Variant,
};

use crate::error::CliError;
use crate::provenance::{resolve, with_provenance, write, write_json, Provenance};
use crate::sweep::{rows_to_csv, run_sweep, SweepGrid, SweepInputs};
use crate::{AccuracyArgs, Cli, Command, Format, GlobalArgs, ModeArg};

pub fn dispatch(cli: &Cli) -> Result<String, CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::GenStream { label_count, frame_count, clusters, mean_active, dwell, presence, exclusive, output } => {
            let mut config = SyntheticConfig::new(*label_count, *frame_count, *mean_active, g.seed);
            config.clusters = parse_clusters(clusters)?;
            config.mean_dwell_frames = *dwell;
            config.member_presence = *presence;
            config.exclusive_clusters = *exclusive;
            gen_stream(g, &config, output.as_deref())
        }
        Command::ApplyNoise { stream, fn_rate, fp_rate, output } => {
            apply_noise(g, stream, *fn_rate, *fp_rate, output.as_deref())
        }
        Command::BuildContexts { stream, budget, max_contexts, algo, min_frequency, output } => {
            build(g, stream, *budget, *max_contexts, algo, *min_frequency, output.as_deref())
        }
        Command::Accuracy { catalog, a_max, size_slope, output } => {
            accuracy_table(g, catalog, *a_max, *size_slope, output.as_deref())
        }
        Command::Simulate { stream, pred, catalog, accuracy, tau, copy, uncoverable, output } => {
            let config = DetectorConfig::new(*tau, *copy)?.with_policy((*uncoverable).into());
            simulate(g, stream, pred.as_deref(), catalog, accuracy, &config, output.as_deref())
        }
        Command::Oracle {
            stream,
            catalog,
            accuracy,
            tau,
            mode,
            s_max,
            subset_cap,
            switch_weight,
            uncoverable,
            output,
        } => {
            let config = OracleConfig {
                mode: match mode {
                    ModeArg::PerFrame => OracleMode::PerFrame,
                    ModeArg::Sequence => OracleMode::Sequence,
                },
                s_max: *s_max,
                subset_cap: *subset_cap,
                switch_weight: *switch_weight,
                uncoverable_policy: (*uncoverable).into(),
            };
            oracle(g, stream, catalog, accuracy, *tau, &config, output.as_deref())
        }
        Command::Metrics { trace, catalog, stream, accuracy, output } => {
            metrics(g, trace, catalog, stream, accuracy, output.as_deref())
        }
        Command::Cost { trace, calibration, output } => cost(g, trace, calibration.as_deref(), output.as_deref()),
        Command::ComposeCheck { instances, max_dim, max_rank, max_adapters, tolerance, output } => {
            let config = IdentityCheckConfig {
                instances: *instances,
                max_dim: *max_dim,
                max_rank: *max_rank,
                max_adapters: *max_adapters,
                seed: g.seed,
            };
            compose_check(g, &config, *tolerance, output.as_deref())
        }
        Command::AnalyzeArch {
            preset,
            contexts,
            rank,
            tokens,
            head_classes,
            adapted_layers,
            calibration,
            trace,
            output,
        } => {
            let mut arch =
                ArchParams::preset(preset).ok_or_else(|| CliError::Usage(format!("unknown preset `{preset}`")))?;
            if let Some(r) = rank {
                arch.lora_rank = *r;
            }
            if let Some(n) = tokens {
                arch.token_count = *n;
            }
            if let Some(h) = head_classes {
                arch.head_classes = *h;
            }
            if let Some(l) = adapted_layers {
                arch.adapted_layers = *l;
            }
            analyze_arch(g, &arch, *contexts, calibration.as_deref(), trace.as_deref(), output.as_deref())
        }
        Command::Sweep {
            stream,
            pred,
            fn_rate,
            fp_rate,
            budgets,
            max_contexts,
            variants,
            tau,
            policies,
            a_max,
            size_slope,
            min_frequency,
            calibration,
            output,
        } => {
            let grid = SweepGrid {
                budgets: parse_list(budgets, "B")?,
                max_contexts: parse_list(max_contexts, "M_max")?,
                variants: parse_list(variants, "variant")?,
                taus: parse_list(tau, "tau")?,
                policies: parse_list(policies, "policy")?,
            };
            let noise = (*fn_rate, *fp_rate);
            let model = accuracy_model(*a_max, *size_slope)?;
            sweep(g, stream, pred.as_deref(), noise, &grid, model, *min_frequency, calibration.as_deref(), output.as_deref())
        }
    }
}

fn parse_list<T: FromStr>(raw: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| CliError::Usage(format!("bad {what} value `{s}`: {e}"))))
        .collect()
}

fn parse_clusters(raw: &str) -> Result<Vec<Vec<Label>>, CliError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    if let Some((n, size)) = raw.split_once(['x', 'X']) {
        let bad = || CliError::Usage(format!("bad cluster layout `{raw}`; expected NxS"));
        let n: usize = n.trim().parse().map_err(|_| bad())?;
        let size: usize = size.trim().parse().map_err(|_| bad())?;
        return Ok(SyntheticConfig::new(0, 0, 1.0, 0).with_uniform_clusters(n, size).clusters);
    }
    raw.split(';').map(|group| parse_list(group, "cluster label")).collect()
}

fn stream_format(g: &GlobalArgs) -> (StreamFormat, &'static str) {
    match g.format {
        Format::Json => (StreamFormat::Jsonl, "jsonl"),
        Format::Csv => (StreamFormat::Csv, "csv"),
    }
}

fn load_stream(prov: &mut Provenance, path: &Path) -> Result<LabelStream, CliError> {
    let text = prov.read(path)?;
    parse_stream(&text, StreamFormat::from_path(path), &LoadOptions::default())
        .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

fn load_catalog(prov: &mut Provenance, path: &Path) -> Result<ContextCatalog, CliError> {
    let text = prov.read(path)?;
    ContextCatalog::from_json(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

fn load_trace(prov: &mut Provenance, path: &Path) -> Result<SelectionTrace, CliError> {
    let text = prov.read(path)?;
    SelectionTrace::from_json(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

fn load_calibration(prov: &mut Provenance, path: Option<&Path>) -> Result<Calibration, CliError> {
    match path {
        Some(p) => {
            let text = prov.read(p)?;
            Calibration::from_json(&text).map_err(|e| CliError::Schema(format!("{}: {e}", p.display())))
        }
        None => Ok(Calibration::builtin()),
    }
}

fn accuracy_model(a_max: f64, size_slope: f64) -> Result<AccuracyModel, CliError> {
    if !(0.0..=1.0).contains(&a_max) {
        return Err(CliError::Usage(format!("a_max {a_max} outside [0, 1]")));
    }
    if !(size_slope >= 0.0 && size_slope.is_finite()) {
        return Err(CliError::Usage(format!("size_slope {size_slope} must be non-negative")));
    }
    Ok(AccuracyModel { a_max, size_slope })
}

fn load_accuracy(
    prov: &mut Provenance,
    args: &AccuracyArgs,
    catalog: &ContextCatalog,
) -> Result<AccuracyTable, CliError> {
    match &args.accuracy {
        Some(path) => {
            let text = prov.read(path)?;
            Ok(AccuracyTable::from_json(catalog, &text)?)
        }
        None => Ok(AccuracyTable::from_model(catalog, &accuracy_model(args.a_max, args.size_slope)?)?),
    }
}

fn params(value: impl Serialize) -> serde_json::Value {
    serde_json::to_value(value).unwrap_or(serde_json::Value::Null)
}

fn write_stream(path: &Path, format: StreamFormat, stream: &LabelStream, prov: &Provenance) -> Result<(), CliError> {
    let text = match format {
        StreamFormat::Jsonl => {
            let body = to_jsonl(stream);
            let rest = body.split_once('\n').map_or("", |(_, rest)| rest);
            let header = json!({ "K": stream.label_count(), "provenance": prov });
            format!("{header}\n{rest}")
        }
        StreamFormat::Csv => format!("{}{}", prov.csv_comment(), to_csv(stream)),
    };
    write(path, &text)
}

fn gen_stream(g: &GlobalArgs, config: &SyntheticConfig, output: Option<&Path>) -> Result<String, CliError> {
    let stream = generate_synthetic_stream(config)?;
    let prov = Provenance::new("gen-stream", g.seed, params(config));
    let (format, ext) = stream_format(g);
    let path = resolve(&g.out_dir, output, &format!("stream.{ext}"));
    write_stream(&path, format, &stream, &prov)?;
    Ok(format!(
        "wrote {}: K={} T={} mean |Y_t|={:.3}",
        path.display(),
        stream.label_count(),
        stream.len(),
        stream.mean_active_labels()
    ))
}

fn apply_noise(g: &GlobalArgs, input: &Path, fn_rate: f64, fp_rate: f64, output: Option<&Path>) -> Result<String, CliError> {
    let noise = NoiseConfig::new(fn_rate, fp_rate, g.seed)?;
    let mut prov = Provenance::new("apply-noise", g.seed, json!({ "fn_rate": fn_rate, "fp_rate": fp_rate }));
    let stream = load_stream(&mut prov, input)?;
    let noisy = apply_prediction_noise(&stream, &noise);
    let (format, ext) = stream_format(g);
    let path = resolve(&g.out_dir, output, &format!("pred.{ext}"));
    write_stream(&path, format, &noisy, &prov)?;
    Ok(format!(
        "wrote {}: {} label occurrences (from {})",
        path.display(),
        noisy.occurrence_count(),
        stream.occurrence_count()
    ))
}

fn build(
    g: &GlobalArgs,
    input: &Path,
    budget: usize,
    max_contexts: usize,
    algo: &str,
    min_frequency: f64,
    output: Option<&Path>,
) -> Result<String, CliError> {
    let variant: Variant = algo.parse().map_err(CliError::Usage)?;
    let mut prov = Provenance::new(
        "build-contexts",
        g.seed,
        json!({ "B": budget, "M_max": max_contexts, "variant": variant, "min_frequency": min_frequency }),
    );
    let stream = load_stream(&mut prov, input)?;
    let matrix = Cooccurrence::build(&stream);
    let valid = valid_labels(&matrix, min_frequency);
    let catalog = build_contexts(&matrix, &valid, budget, max_contexts, BuildVariant::from_variant(variant, g.seed))?;

    #[derive(Serialize)]
    struct Out<'a> {
        #[serde(flatten)]
        catalog: &'a ContextCatalog,
        shape: ctxsched::catalog::CatalogShape,
        valid_labels: usize,
        digest: String,
    }
    let out = Out { catalog: &catalog, shape: catalog.shape(), valid_labels: valid.len(), digest: catalog.digest() };
    let path = resolve(&g.out_dir, output, "catalog.json");
    write_json(&path, &with_provenance(&out, &prov)?)?;
    Ok(format!(
        "wrote {}: {} {} contexts over {} labels (B={budget}, M_max={max_contexts})",
        path.display(),
        catalog.len(),
        variant,
        valid.len()
    ))
}

fn accuracy_table(
    g: &GlobalArgs,
    catalog_path: &Path,
    a_max: f64,
    size_slope: f64,
    output: Option<&Path>,
) -> Result<String, CliError> {
    let model = accuracy_model(a_max, size_slope)?;
    let mut prov = Provenance::new("accuracy", g.seed, params(model));
    let catalog = load_catalog(&mut prov, catalog_path)?;
    let table = AccuracyTable::from_model(&catalog, &model)?;
    let body: serde_json::Value =
        serde_json::from_str(&table.to_json()).map_err(|e| CliError::Internal(e.to_string()))?;
    let path = resolve(&g.out_dir, output, "accuracy.json");
    write_json(&path, &with_provenance(body, &prov)?)?;
    Ok(format!("wrote {}: {} entries", path.display(), table.entries().count()))
}

fn write_trace(g: &GlobalArgs, trace: &SelectionTrace, prov: &Provenance, output: Option<&Path>) -> Result<PathBuf, CliError> {
    match g.format {
        Format::Json => {
            let path = resolve(&g.out_dir, output, "trace.json");
            write_json(&path, &with_provenance(trace, prov)?)?;
            Ok(path)
        }
        Format::Csv => {
            let path = resolve(&g.out_dir, output, "trace.csv");
            write(&path, &format!("{}{}", prov.csv_comment(), trace.to_csv()))?;
            Ok(path)
        }
    }
}

fn coverage_text(trace: &SelectionTrace) -> String {
    avg_coverage(trace).map_or_else(|_| "n/a".into(), |c| format!("{c:.4}"))
}

fn simulate(
    g: &GlobalArgs,
    truth_path: &Path,
    pred_path: Option<&Path>,
    catalog_path: &Path,
    accuracy: &AccuracyArgs,
    config: &DetectorConfig,
    output: Option<&Path>,
) -> Result<String, CliError> {
    let mut prov = Provenance::new("simulate", g.seed, params(config));
    let truth = load_stream(&mut prov, truth_path)?;
    let pred = match pred_path {
        Some(p) => load_stream(&mut prov, p)?,
        None => truth.clone(),
    };
    let catalog = load_catalog(&mut prov, catalog_path)?;
    let acc = load_accuracy(&mut prov, accuracy, &catalog)?;
    let trace = run_simulation(&truth, &pred, &catalog, &acc, config)?;
    let path = write_trace(g, &trace, &prov, output)?;
    Ok(format!(
        "wrote {}: {} frames, policy {}, AvgCoverage {}, SwitchPenalty {}",
        path.display(),
        trace.len(),
        trace.header.policy,
        coverage_text(&trace),
        switch_penalty(&trace)
    ))
}

fn oracle(
    g: &GlobalArgs,
    stream_path: &Path,
    catalog_path: &Path,
    accuracy: &AccuracyArgs,
    tau: f64,
    config: &OracleConfig,
    output: Option<&Path>,
) -> Result<String, CliError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(CliError::Usage(format!("tau {tau} outside [0, 1]")));
    }
    let mut prov = Provenance::new("oracle", g.seed, json!({ "tau": tau, "config": config }));
    let stream = load_stream(&mut prov, stream_path)?;
    let catalog = load_catalog(&mut prov, catalog_path)?;
    let acc = load_accuracy(&mut prov, accuracy, &catalog)?;
    let trace = run_oracle(&stream, &catalog, &acc, tau, config)?;
    let path = write_trace(g, &trace, &prov, output)?;
    let objective = trace.header.objective.map_or_else(String::new, |o| format!(", objective {o}"));
    Ok(format!(
        "wrote {}: {} frames, policy {}, AvgCoverage {}{objective}",
        path.display(),
        trace.len(),
        trace.header.policy,
        coverage_text(&trace)
    ))
}

fn metrics(
    g: &GlobalArgs,
    trace_path: &Path,
    catalog_path: &Path,
    stream_path: &Path,
    accuracy: &AccuracyArgs,
    output: Option<&Path>,
) -> Result<String, CliError> {
    let mut prov = Provenance::new("metrics", g.seed, serde_json::Value::Null);
    let trace = load_trace(&mut prov, trace_path)?;
    let catalog = load_catalog(&mut prov, catalog_path)?;
    let stream = load_stream(&mut prov, stream_path)?;
    let acc = load_accuracy(&mut prov, accuracy, &catalog)?;
    trace.check_invariants(&catalog).map_err(|e| CliError::Schema(e.to_string()))?;
    let matrix = Cooccurrence::build(&stream);
    let report = metrics_report(&trace, &catalog, &matrix, &acc)?;
    let violations = coverage_violations(&trace, &catalog, &acc, trace.header.tau).len();

    #[derive(Serialize)]
    struct Out<'a> {
        #[serde(flatten)]
        report: &'a ctxsched::metrics::MetricsReport,
        coverage_violations: usize,
    }
    let path = resolve(&g.out_dir, output, "metrics.json");
    write_json(&path, &with_provenance(Out { report: &report, coverage_violations: violations }, &prov)?)?;
    Ok(format!(
        "wrote {}: IntraCoherence {:.6}, AvgCoverage {:.4}, SwitchPenalty {}, score {:.4}",
        path.display(),
        report.intra_coherence,
        report.avg_coverage,
        report.switch_penalty,
        report.coverage_weighted_score
    ))
}

fn cost(g: &GlobalArgs, trace_path: &Path, calibration: Option<&Path>, output: Option<&Path>) -> Result<String, CliError> {
    let mut prov = Provenance::new("cost", g.seed, serde_json::Value::Null);
    let trace = load_trace(&mut prov, trace_path)?;
    let cal = load_calibration(&mut prov, calibration)?;
    let estimate = estimate_latency_power(&trace, &cal.cost);
    let s = estimate.summary;
    let comparisons: Vec<_> = cal.profiles.iter().map(|p| compare_profile(&s, p)).collect();
    let path = match g.format {
        Format::Json => {
            let path = resolve(&g.out_dir, output, "cost.json");
            let body = json!({
                "calibration_source": cal.source,
                "cost": cal.cost,
                "summary": s,
                "comparisons": comparisons,
                "frames": estimate.frames,
            });
            write_json(&path, &with_provenance(body, &prov)?)?;
            path
        }
        Format::Csv => {
            let path = resolve(&g.out_dir, output, "cost.csv");
            let mut text = prov.csv_comment();
            text.push_str(&format!("# calibration={}\nt,active,latency_ms,power_w\n", cal.source));
            for f in &estimate.frames {
                text.push_str(&format!("{},{},{},{}\n", f.t, f.active, f.latency_ms, f.power_w));
            }
            write(&path, &text)?;
            path
        }
    };
    Ok(format!(
        "wrote {}: mean latency {:.2} ms, mean power {:.4} W, {:.4} J/frame",
        path.display(),
        s.mean_latency_ms,
        s.mean_power_w,
        s.energy_per_frame_j
    ))
}

fn compose_check(
    g: &GlobalArgs,
    config: &IdentityCheckConfig,
    tolerance: f64,
    output: Option<&Path>,
) -> Result<String, CliError> {
    let prov = Provenance::new("compose-check", g.seed, json!({ "config": config, "tolerance": tolerance }));
    let report = identity_check(config);
    let path = resolve(&g.out_dir, output, "compose_check.json");
    write_json(&path, &with_provenance(report, &prov)?)?;
    let summary = format!(
        "{} instances: max relative error merged {:.3e}, stacked {:.3e}; MACs unmerged {} merged {} stacked {} independent {}",
        report.instances,
        report.max_merge_error,
        report.max_stack_error,
        report.unmerged_macs,
        report.merged_macs,
        report.stacked_macs,
        report.independent_macs
    );
    if report.max_merge_error > tolerance || report.max_stack_error > tolerance {
        return Err(CliError::Internal(format!("composition identity violated: {summary}")));
    }
    Ok(format!("wrote {}: {summary}", path.display()))
}

fn analyze_arch(
    g: &GlobalArgs,
    arch: &ArchParams,
    contexts: usize,
    calibration: Option<&Path>,
    trace: Option<&Path>,
    output: Option<&Path>,
) -> Result<String, CliError> {
    let mut prov = Provenance::new("analyze-arch", g.seed, json!({ "arch": arch, "contexts": contexts }));
    let cal = load_calibration(&mut prov, calibration)?;
    let trace = trace.map(|p| load_trace(&mut prov, p)).transpose()?;
    let report = profile_report(arch, contexts, trace.as_ref(), &cal)?;
    let path = resolve(&g.out_dir, output, "arch.json");
    write_json(&path, &with_provenance(&report, &prov)?)?;
    let total = report.rows.last().map_or(0.0, |r| r.params_m);
    Ok(format!(
        "wrote {}: params {:.2} M + {:.2} M ({} contexts x {} per adapter) = {:.2} M; per-adapter MAC overhead {:.2} M ({} MACs)",
        path.display(),
        arch.base_params as f64 / 1e6,
        report.catalog_param_overhead as f64 / 1e6,
        contexts,
        report.adapter_params,
        total,
        report.adapter_mac_overhead as f64 / 1e6,
        report.adapter_mac_overhead
    ))
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    g: &GlobalArgs,
    stream_path: &Path,
    pred_path: Option<&Path>,
    noise: (f64, f64),
    grid: &SweepGrid,
    model: AccuracyModel,
    min_frequency: f64,
    calibration: Option<&Path>,
    output: Option<&Path>,
) -> Result<String, CliError> {
    grid.validate()?;
    let taus_ok = grid.taus.iter().all(|t| (0.0..=1.0).contains(t));
    if !taus_ok {
        return Err(CliError::Usage("tau values must lie in [0, 1]".into()));
    }
    let mut prov = Provenance::new(
        "sweep",
        g.seed,
        json!({
            "B": grid.budgets,
            "M_max": grid.max_contexts,
            "variants": grid.variants,
            "tau": grid.taus,
            "policies": grid.policies.iter().map(|p| p.as_str()).collect::<Vec<_>>(),
            "accuracy_model": model,
            "min_frequency": min_frequency,
            "noise": { "fn_rate": noise.0, "fp_rate": noise.1 },
        }),
    );
    let truth = load_stream(&mut prov, stream_path)?;
    let pred = match pred_path {
        Some(p) => load_stream(&mut prov, p)?,
        None => apply_prediction_noise(&truth, &NoiseConfig::new(noise.0, noise.1, g.seed)?),
    };
    let cal = load_calibration(&mut prov, calibration)?;
    let inputs = SweepInputs {
        truth: &truth,
        pred: &pred,
        accuracy: model,
        cost: cal.cost,
        min_frequency,
        oracle: OracleConfig::default(),
        seed: g.seed,
    };
    let rows = run_sweep(grid, &inputs, g.jobs)?;
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    let path = resolve(&g.out_dir, output, "sweep.csv");
    write(&path, &format!("{}# calibration={}\n{}", prov.csv_comment(), cal.source, rows_to_csv(&rows)))?;
    let policies: Vec<&str> = grid.policies.iter().map(|p: &PolicyTag| p.as_str()).collect();
    Ok(format!(
        "wrote {}: {} cells ({} failed), policies {}",
        path.display(),
        rows.len(),
        failed,
        policies.join("/")
    ))
}
