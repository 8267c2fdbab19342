use std::collections::BTreeSet;

use proptest::prelude::*;

use ctxsched::catalog::valid_labels;
use ctxsched::compose::{forward_merged, forward_unmerged, ContextAdapters, DenseMatrix, LayerStack, LoraPair};
use ctxsched::cost::{adapter_mac_overhead, estimate_latency_power, ArchParams, Calibration};
use ctxsched::detector::uncoverable_labels;
use ctxsched::metrics::{coverage_violations, selection_objective};
use ctxsched::oracle::per_frame_oracle_trace;
use ctxsched::stream::{parse_stream, render_stream, LoadOptions, StreamFormat};
use ctxsched::trace::TraceHeader;
use ctxsched::*;

fn stream_strategy(max_k: usize, max_t: usize) -> impl Strategy<Value = LabelStream> {
    (1..=max_k).prop_flat_map(move |k| {
        prop::collection::vec(prop::collection::btree_set(0..k as Label, 0..=k.min(4)), 0..=max_t)
            .prop_map(move |sets| LabelStream::from_label_sets(k, sets).unwrap())
    })
}

/// A stream plus an arbitrary catalog of `1..=max_n` label subsets over the same labels.
fn instance_strategy(max_k: usize, max_n: usize, max_t: usize) -> impl Strategy<Value = (LabelStream, ContextCatalog)> {
    (1..=max_k).prop_flat_map(move |k| {
        let frames = prop::collection::vec(prop::collection::btree_set(0..k as Label, 0..=k.min(4)), 0..=max_t);
        let contexts = prop::collection::vec(prop::collection::btree_set(0..k as Label, 1..=k.min(4)), 1..=max_n);
        (frames, contexts).prop_map(move |(sets, ctxs)| {
            let stream = LabelStream::from_label_sets(k, sets).unwrap();
            let budget = ctxs.iter().map(BTreeSet::len).max().unwrap_or(1);
            let contexts: Vec<Context> = ctxs.into_iter().enumerate().map(|(i, s)| Context::new(i, s)).collect();
            let n = contexts.len();
            (stream, ContextCatalog::new(budget, n, Variant::Basic, contexts))
        })
    })
}

fn tau_strategy() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(0.5), Just(0.86), Just(0.89), 0.0..1.0]
}

fn qualifying_mask(catalog: &ContextCatalog, acc: &AccuracyTable, label: Label, tau: f64) -> u32 {
    catalog
        .contexts
        .iter()
        .enumerate()
        .filter(|(_, c)| c.labels.contains(&label) && acc.qualifies(c.id, label, tau))
        .fold(0, |m, (i, _)| m | 1 << i)
}

/// Exhaustive minimum of `Σ|S_t| + λ·Σ|S_t Δ S_(t−1)|` over all sequences of
/// subsets covering each frame's coverable labels.
fn brute_force_objective(stream: &LabelStream, catalog: &ContextCatalog, acc: &AccuracyTable, tau: f64, lambda: f64) -> f64 {
    let n = catalog.len();
    let feasible: Vec<Vec<u32>> = stream
        .frames()
        .iter()
        .map(|f| {
            let needs: Vec<u32> = f
                .labels
                .iter()
                .map(|&l| qualifying_mask(catalog, acc, l, tau))
                .filter(|&m| m != 0)
                .collect();
            (0..1u32 << n).filter(|s| needs.iter().all(|m| s & m != 0)).collect()
        })
        .collect();
    fn go(t: usize, prev: u32, acc: f64, feasible: &[Vec<u32>], lambda: f64, best: &mut f64) {
        if acc >= *best {
            return;
        }
        if t == feasible.len() {
            *best = acc;
            return;
        }
        for &s in &feasible[t] {
            let step = s.count_ones() as f64 + lambda * (s ^ prev).count_ones() as f64;
            go(t + 1, s, acc + step, feasible, lambda, best);
        }
    }
    let mut best = f64::INFINITY;
    go(0, 0, 0.0, &feasible, lambda, &mut best);
    best
}

fn objective(trace: &SelectionTrace, lambda: f64) -> f64 {
    selection_objective(trace.frames.iter().map(|f| &f.selected), lambda)
}

fn header(policy: PolicyTag) -> TraceHeader {
    TraceHeader {
        tool_version: TOOL_VERSION.into(),
        policy,
        catalog_hash: String::new(),
        tau: 0.5,
        context_copy: false,
        s_max: None,
        switch_weight: None,
        objective: None,
    }
}

fn constant_trace(frames: usize, active: usize) -> SelectionTrace {
    let selected: BTreeSet<ContextId> = (0..active).collect();
    SelectionTrace::assemble(
        header(PolicyTag::Greedy),
        (0..frames).map(|_| (LabelSet::new(), LabelSet::new(), selected.clone(), LabelSet::new())),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn stream_round_trips_through_both_formats(stream in stream_strategy(12, 20)) {
        for format in [StreamFormat::Jsonl, StreamFormat::Csv] {
            let text = render_stream(&stream, format);
            let back = parse_stream(&text, format, &LoadOptions::default()).unwrap();
            prop_assert_eq!(&back, &stream);
        }
    }

    #[test]
    fn cooccurrence_symmetric_and_order_free(
        (stream, order) in stream_strategy(10, 25).prop_flat_map(|s| {
            let idx: Vec<usize> = (0..s.len()).collect();
            (Just(s), Just(idx).prop_shuffle())
        })
    ) {
        let k = stream.label_count();
        let m = Cooccurrence::build(&stream);
        let shuffled = LabelStream::from_label_sets(k, order.iter().map(|&t| stream.labels(t).clone())).unwrap();
        let p = Cooccurrence::build(&shuffled);
        for i in 0..k as Label {
            for j in 0..k as Label {
                prop_assert_eq!(m.get(i, j), m.get(j, i));
                prop_assert_eq!(m.count(i, j), p.count(i, j));
                let direct = stream.frames().iter().filter(|f| f.labels.contains(&i) && f.labels.contains(&j)).count();
                prop_assert_eq!(m.count(i, j), direct as u64);
            }
        }
    }

    #[test]
    fn built_catalogs_are_valid(
        stream in stream_strategy(12, 30),
        budget in 1usize..=5,
        max_contexts in 1usize..=12,
        variant in prop::sample::select(Variant::ALL.to_vec()),
        seed in 0u64..1000,
    ) {
        let m = Cooccurrence::build(&stream);
        let valid = valid_labels(&m, 0.0);
        match build_contexts(&m, &valid, budget, max_contexts, BuildVariant::from_variant(variant, seed)) {
            Ok(cat) => {
                prop_assert!(validate_catalog(&cat, &valid).is_ok());
                prop_assert!(cat.len() <= max_contexts);
                let mut seen = BTreeSet::new();
                for c in &cat.contexts {
                    prop_assert!(!c.labels.is_empty() && c.labels.len() <= budget);
                    prop_assert!(seen.insert(c.labels.clone()), "duplicate context");
                }
                prop_assert!(valid.is_subset(&cat.covered_labels()));
                if variant == Variant::GreedyNonoverlap {
                    let total: usize = cat.contexts.iter().map(Context::len).sum();
                    prop_assert_eq!(total, cat.covered_labels().len(), "contexts overlap");
                }
            }
            Err(CatalogError::Infeasible { uncovered }) => {
                prop_assert!(!uncovered.is_empty());
                prop_assert!(uncovered.iter().all(|l| valid.contains(l)));
            }
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn raising_tau_never_shrinks_uncoverable((stream, cat) in instance_strategy(8, 6, 10), t1 in 0.0..1.0f64, t2 in 0.0..1.0f64) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let acc = AccuracyTable::from_model(&cat, &AccuracyModel::default()).unwrap();
        for f in stream.frames() {
            let a = uncoverable_labels(&f.labels, &cat, &acc, lo);
            let b = uncoverable_labels(&f.labels, &cat, &acc, hi);
            prop_assert!(a.is_subset(&b));
        }
    }

    #[test]
    fn simulated_traces_cover_every_coverable_label(
        (stream, cat) in instance_strategy(10, 8, 20),
        noisy in stream_strategy(10, 20),
        tau in tau_strategy(),
        copy in any::<bool>(),
    ) {
        let acc = AccuracyTable::from_model(&cat, &AccuracyModel::default()).unwrap();
        let config = DetectorConfig::new(tau, copy).unwrap();
        let trace = run_simulation(&stream, &stream, &cat, &acc, &config).unwrap();
        prop_assert!(coverage_violations(&trace, &cat, &acc, tau).is_empty());
        trace.check_invariants(&cat).unwrap();
        // Predictions from an unrelated stream, restricted to the same label space.
        if noisy.label_count() == stream.label_count() && noisy.len() == stream.len() {
            let trace = run_simulation(&stream, &noisy, &cat, &acc, &config).unwrap();
            prop_assert!(coverage_violations(&trace, &cat, &acc, tau).is_empty());
        }
    }

    #[test]
    fn oracles_never_lose_to_greedy((stream, cat) in instance_strategy(10, 8, 20), tau in tau_strategy()) {
        let acc = AccuracyTable::from_model(&cat, &AccuracyModel::default()).unwrap();
        let greedy = run_simulation(&stream, &stream, &cat, &acc, &DetectorConfig::new(tau, false).unwrap()).unwrap();
        let copy = run_simulation(&stream, &stream, &cat, &acc, &DetectorConfig::new(tau, true).unwrap()).unwrap();
        let per_frame = per_frame_oracle_trace(&stream, &cat, &acc, tau, UncoverablePolicy::BestEffort).unwrap();
        for (o, g) in per_frame.frames.iter().zip(&greedy.frames) {
            prop_assert!(o.selected.len() <= g.selected.len(), "frame {}", o.t);
        }
        let config = OracleConfig { s_max: cat.len(), ..OracleConfig::default() };
        let seq = sequence_oracle(&stream, &cat, &acc, tau, &config).unwrap();
        prop_assert!(coverage_violations(&seq, &cat, &acc, tau).is_empty());
        let best = objective(&seq, 1.0);
        prop_assert!(best <= objective(&greedy, 1.0));
        prop_assert!(best <= objective(&copy, 1.0));
        prop_assert!(best <= objective(&per_frame, 1.0));
    }

    #[test]
    fn sequence_oracle_matches_enumeration(
        (stream, cat) in instance_strategy(6, 4, 5),
        tau in tau_strategy(),
        lambda in prop::sample::select(vec![0.0, 0.5, 1.0, 2.0]),
    ) {
        let acc = AccuracyTable::from_model(&cat, &AccuracyModel::default()).unwrap();
        let config = OracleConfig { s_max: cat.len(), switch_weight: lambda, ..OracleConfig::default() };
        let seq = sequence_oracle(&stream, &cat, &acc, tau, &config).unwrap();
        prop_assert!(coverage_violations(&seq, &cat, &acc, tau).is_empty());
        let got = objective(&seq, lambda);
        let want = brute_force_objective(&stream, &cat, &acc, tau, lambda);
        prop_assert!((got - want).abs() < 1e-9, "oracle {got} vs enumeration {want}");
    }

    #[test]
    fn exact_merge_equals_unmerged(
        (h, d, tokens) in (1usize..=5, 1usize..=5, 1usize..=4),
        adapters in 0usize..=4,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut mat = |r: usize, c: usize| {
            let data = (0..r * c).map(|_| Rational64::new(rng.gen_range(-6..=6), rng.gen_range(1..=4))).collect();
            DenseMatrix::new(r, c, data).unwrap()
        };
        let x = mat(tokens, h);
        let w = mat(h, d);
        let loras: Vec<LoraPair<Rational64>> = (0..adapters)
            .map(|i| {
                let r = 1 + i % h.min(d);
                LoraPair::new(mat(h, r), mat(r, d)).unwrap()
            })
            .collect();
        let a = forward_unmerged(&x, &w, &loras).unwrap();
        let b = forward_merged(&x, &w, &loras).unwrap();
        prop_assert_eq!(a.output, b.output);
    }

    #[test]
    fn cost_is_monotone_in_active_contexts(frames in 1usize..50, k1 in 0usize..8, k2 in 0usize..8) {
        let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
        let cost = Calibration::builtin().cost;
        let a = estimate_latency_power(&constant_trace(frames, lo), &cost).summary;
        let b = estimate_latency_power(&constant_trace(frames, hi), &cost).summary;
        prop_assert!(a.mean_power_w <= b.mean_power_w);
        prop_assert!(a.mean_latency_ms <= b.mean_latency_ms);
        prop_assert!(a.total_energy_j <= b.total_energy_j);
        let expected = cost.base_power_w + hi as f64 * cost.per_adapter_power_w;
        prop_assert!((b.mean_power_w - expected).abs() < 1e-12);
    }

    #[test]
    fn stacked_adapter_macs_match_closed_form(
        layers in 1usize..=6,
        fraction in prop::sample::select(vec![0.1, 0.2, 0.5, 1.0]),
        d in 3usize..=6,
        rank in 1usize..=3,
        projections in 1usize..=3,
        tokens in 1usize..=4,
    ) {
        let mat = |r: usize, c: usize| DenseMatrix::new(r, c, vec![0.5f64; r * c]).unwrap();
        let stack: LayerStack<f64> = LayerStack::new((0..layers).map(|_| mat(d, d)).collect(), fraction).unwrap();
        let first = stack.first_adapted();
        let ctx = ContextAdapters {
            attachments: (first..layers)
                .flat_map(|l| (0..projections).map(move |_| l))
                .map(|l| (l, LoraPair::new(mat(d, rank), mat(rank, d)).unwrap()))
                .collect(),
        };
        let x = mat(tokens, d);
        let none = stack.stacked_forward(&x, &[]).unwrap().macs;
        let one = stack.stacked_forward(&x, std::slice::from_ref(&ctx)).unwrap().macs;
        let measured = one - none - stack.suffix_base_macs(tokens);
        let arch = ArchParams {
            layers,
            hidden_dim: d,
            lora_rank: rank,
            adapted_projections: projections,
            adapted_layers: stack.adapted_layer_count(),
            token_count: tokens,
            ..ArchParams::deit_tiny()
        };
        prop_assert_eq!(measured, adapter_mac_overhead(&arch).unwrap());
    }
}
