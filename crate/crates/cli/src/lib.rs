//! Command-line front end for `ctxsched`.
//!
//! Every command reads its declared inputs, writes one report (JSON unless
//! `--format csv` applies) under `--out-dir` and prints a one-line summary.
//! Exit codes: 0 success, 1 usage, 2 I/O, 3 schema, 4 infeasibility,
//! 5 internal.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod error;
pub mod provenance;
pub mod sweep;

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "ctxsched", version, about = "Context-aware adapter scheduling simulator")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct AccuracyArgs {
    /// Accuracy table file; without it the synthetic size model is used.
    #[arg(long)]
    pub accuracy: Option<PathBuf>,
    #[arg(long, default_value_t = 0.9)]
    pub a_max: f64,
    #[arg(long, default_value_t = 0.02)]
    pub size_slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Error,
    BestEffort,
}

impl From<PolicyArg> for ctxsched::UncoverablePolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Error => ctxsched::UncoverablePolicy::Error,
            PolicyArg::BestEffort => ctxsched::UncoverablePolicy::BestEffort,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    PerFrame,
    Sequence,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic label stream.
    GenStream {
        #[arg(long = "K")]
        label_count: usize,
        #[arg(long = "T")]
        frame_count: usize,
        /// `NxS` for N clusters of S consecutive labels, or explicit `0,1,2;3,4`.
        #[arg(long, default_value = "")]
        clusters: String,
        #[arg(long, default_value_t = 2.0)]
        mean_active: f64,
        #[arg(long, default_value_t = 10.0)]
        dwell: f64,
        #[arg(long, default_value_t = 0.8)]
        presence: f64,
        /// At most one cluster active per frame.
        #[arg(long)]
        exclusive: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Derive a predicted stream by dropping and injecting labels.
    ApplyNoise {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        fn_rate: f64,
        #[arg(long, default_value_t = 0.0)]
        fp_rate: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Build a context catalog from a stream's co-occurrence.
    BuildContexts {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long = "B")]
        budget: usize,
        #[arg(long = "Mmax")]
        max_contexts: usize,
        /// basic, greedy (non-overlapping) or overlap.
        #[arg(long, default_value = "greedy")]
        algo: String,
        #[arg(long, default_value_t = 0.0)]
        min_frequency: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write the synthetic accuracy table of a catalog.
    Accuracy {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        a_max: f64,
        #[arg(long, default_value_t = 0.02)]
        size_slope: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Replay a stream through greedy context detection.
    Simulate {
        /// Ground-truth stream.
        #[arg(long)]
        stream: PathBuf,
        /// Predicted stream driving detection (default: the ground truth).
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        catalog: PathBuf,
        #[command(flatten)]
        accuracy: AccuracyArgs,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(long)]
        copy: bool,
        #[arg(long, value_enum, default_value_t = PolicyArg::BestEffort)]
        uncoverable: PolicyArg,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Exact per-frame or sequence-optimal selection on the ground truth.
    Oracle {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[command(flatten)]
        accuracy: AccuracyArgs,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(long, value_enum, default_value_t = ModeArg::Sequence)]
        mode: ModeArg,
        #[arg(long, default_value_t = 4)]
        s_max: usize,
        #[arg(long, default_value_t = 12)]
        subset_cap: usize,
        #[arg(long, default_value_t = 1.0)]
        switch_weight: f64,
        #[arg(long, value_enum, default_value_t = PolicyArg::BestEffort)]
        uncoverable: PolicyArg,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Catalog and trace metrics.
    Metrics {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        /// Stream the co-occurrence statistics come from.
        #[arg(long)]
        stream: PathBuf,
        #[command(flatten)]
        accuracy: AccuracyArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Latency, power and energy of a trace.
    Cost {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Randomized check of the adapter composition identities.
    ComposeCheck {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 64)]
        max_dim: usize,
        #[arg(long, default_value_t = 8)]
        max_rank: usize,
        #[arg(long, default_value_t = 5)]
        max_adapters: usize,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Parameter, memory and MAC accounting for an architecture and catalog size.
    AnalyzeArch {
        #[arg(long, default_value = "deit-tiny")]
        preset: String,
        #[arg(long, default_value_t = 11)]
        contexts: usize,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        tokens: Option<usize>,
        #[arg(long)]
        head_classes: Option<usize>,
        #[arg(long)]
        adapted_layers: Option<usize>,
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Optional trace whose cost is summarized alongside.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Cross-product sweep over catalog and detection parameters.
    Sweep {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Noise applied to the stream when `--pred` is absent.
        #[arg(long, default_value_t = 0.0)]
        fn_rate: f64,
        #[arg(long, default_value_t = 0.0)]
        fp_rate: f64,
        #[arg(long = "B", default_value = "2,5,15")]
        budgets: String,
        #[arg(long = "Mmax", default_value = "50")]
        max_contexts: String,
        #[arg(long, default_value = "basic,greedy_nonoverlap,greedy_overlap")]
        variants: String,
        #[arg(long, default_value = "0.5")]
        tau: String,
        #[arg(long, default_value = "greedy,greedy_copy,oracle_per_frame")]
        policies: String,
        #[arg(long, default_value_t = 0.9)]
        a_max: f64,
        #[arg(long, default_value_t = 0.02)]
        size_slope: f64,
        #[arg(long, default_value_t = 0.0)]
        min_frequency: f64,
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::dispatch(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
