//! Command-line front end: one JSON experiment config plus a handful of
//! override flags drive the train / eval / ablate / sections / simulate
//! flows. Exit codes: 0 on success, 1 for configuration problems, 2 for
//! failures while running.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use survfuse::pipeline::{
    run_ablate, run_eval, run_km_export, run_sections, run_simulate, run_train, AblationSweep,
    EvalTarget, ExperimentConfig, PipelineError, ThresholdSpec,
};
use survfuse::simdata::SyntheticSpec;

#[derive(Parser)]
#[command(
    name = "survfuse",
    version,
    about = "Survival analysis on fused feature tables: train, evaluate, ablate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Preprocess a report corpus into per-category sentence bundles.
    Sections {
        /// Experiment config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Report corpus path (CSV or JSONL); overrides the config.
        #[arg(long)]
        reports: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Generate a synthetic cohort with a known risk structure.
    Simulate {
        /// Synthetic cohort spec JSON.
        #[arg(long)]
        spec: PathBuf,
        /// Directory for the generated CSVs.
        #[arg(long)]
        out: PathBuf,
        /// Override the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and evaluate it on the internal validation split.
    Train {
        /// Experiment config JSON.
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a saved checkpoint: C-index, risk groups, KM curves, log-rank.
    Eval {
        /// Experiment config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Rows to score: validation, test, or all.
        #[arg(long)]
        target: Option<EvalTarget>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Sweep thresholds or section combinations, one full run per point.
    Ablate {
        /// Experiment config JSON.
        #[arg(long)]
        config: PathBuf,
        /// What the sweep varies.
        #[arg(long, value_enum)]
        sweep: SweepKind,
        /// Sweep points; defaults to the standard grid. Thresholds:
        /// comma-separated numbers or `all` (e.g. `0.3,0.7,all`).
        /// Sections: comma-separated combos with `+` joining blocks
        /// (e.g. `indications,indications+pancreas`).
        #[arg(long)]
        points: Option<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Export Kaplan-Meier curves for a checkpoint's risk groups.
    KmExport {
        /// Experiment config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Rows to score: validation, test, or all.
        #[arg(long)]
        target: Option<EvalTarget>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Thresholds,
    Sections,
}

/// Config fields that can be overridden from the command line.
#[derive(Args)]
struct Overrides {
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Bootstrap replicate count.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Correlation threshold: a number or `all`.
    #[arg(long)]
    threshold: Option<ThresholdSpec>,
    /// Feature blocks to fuse, comma separated.
    #[arg(long, value_delimiter = ',')]
    blocks: Option<Vec<String>>,
}

enum CliError {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

fn validation<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Validation(e.into())
}

/// Configuration mistakes surfaced while running still count as
/// validation failures; everything else is a runtime failure.
fn classify(e: PipelineError) -> CliError {
    match &e {
        PipelineError::BadConfig(_) | PipelineError::UnknownBlock(_) => {
            CliError::Validation(e.into())
        }
        _ => CliError::Runtime(e.into()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut config = ExperimentConfig::load(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(CliError::Validation)?;
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(out) = &overrides.out {
        config.output_dir = out.clone();
    }
    if let Some(b) = overrides.bootstrap {
        config.evaluation.bootstrap_b = b;
    }
    if let Some(t) = overrides.threshold {
        config.features.correlation_threshold = t;
    }
    if let Some(blocks) = &overrides.blocks {
        config.features.blocks = blocks.clone();
    }
    config.validate().map_err(validation)?;
    Ok(config)
}

fn parse_points(kind: SweepKind, points: Option<&str>) -> Result<AblationSweep, CliError> {
    match (kind, points) {
        (SweepKind::Thresholds, None) => Ok(AblationSweep::standard_thresholds()),
        (SweepKind::Sections, None) => Ok(AblationSweep::standard_sections()),
        (SweepKind::Thresholds, Some(text)) => {
            let values = text
                .split(',')
                .map(|p| p.trim().parse::<ThresholdSpec>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Validation(anyhow::anyhow!(e)))?;
            Ok(AblationSweep::Thresholds { values })
        }
        (SweepKind::Sections, Some(text)) => {
            let combinations = text
                .split(',')
                .map(|combo| {
                    combo
                        .split('+')
                        .map(|b| b.trim().to_string())
                        .filter(|b| !b.is_empty())
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>();
            Ok(AblationSweep::Sections { combinations })
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Sections {
            config,
            reports,
            overrides,
        } => {
            let mut config = load_config(&config, &overrides)?;
            if let Some(path) = reports {
                config.data.reports = Some(path);
            }
            let summary = run_sections(&config).map_err(classify)?;
            println!("processed {} report(s)", summary.n_reports);
            for row in &summary.categories {
                println!(
                    "{}: {} sentence(s), {} placeholder(s) ({:.1}%)",
                    row.category,
                    row.sentences,
                    row.placeholders,
                    100.0 * summary.placeholder_rate(row.category)
                );
            }
            println!("wrote {}", summary.bundle_path.display());
            Ok(())
        }
        Command::Simulate { spec, out, seed } => {
            let bytes = std::fs::read(&spec)
                .with_context(|| format!("reading spec {}", spec.display()))
                .map_err(CliError::Validation)?;
            let mut spec: SyntheticSpec = serde_json::from_slice(&bytes)
                .context("parsing synthetic cohort spec")
                .map_err(CliError::Validation)?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let summary = run_simulate(&spec, &out).map_err(|e| match &e {
                PipelineError::Sim(_) => CliError::Validation(e.into()),
                _ => CliError::Runtime(e.into()),
            })?;
            println!(
                "generated {} sample(s), {} event(s), censoring rate {:.1}%",
                summary.n,
                summary.events,
                100.0 * summary.censoring_rate
            );
            println!("oracle C-index: {:.4}", summary.oracle_c_index);
            println!("wrote {}", summary.paths.cohort_csv.display());
            println!("wrote {}", summary.paths.features_csv.display());
            println!("wrote {}", summary.paths.spec_json.display());
            Ok(())
        }
        Command::Train { config, overrides } => {
            let config = load_config(&config, &overrides)?;
            let artifacts = run_train(&config).map_err(classify)?;
            let m = &artifacts.metrics;
            println!("model: {}", m.model_family);
            println!(
                "blocks: {} (input_dim = {}, retained = {})",
                m.blocks.join("+"),
                m.input_dim,
                m.retained_features
            );
            println!(
                "subjects: train {} / validation {} / test {}",
                m.subjects.train, m.subjects.validation, m.subjects.test
            );
            println!(
                "samples: train {} / validation {} / test {}",
                m.samples.train, m.samples.validation, m.samples.test
            );
            println!("internal C-index: {}", m.internal.formatted());
            println!("wrote {}", artifacts.checkpoint_path.display());
            if let Some(path) = &artifacts.history_path {
                println!("wrote {}", path.display());
            }
            println!("wrote {}", artifacts.metrics_path.display());
            Ok(())
        }
        Command::Eval {
            config,
            checkpoint,
            target,
            overrides,
        } => {
            let mut config = load_config(&config, &overrides)?;
            if let Some(target) = target {
                config.evaluation.eval_split = target;
            }
            let artifacts = run_eval(&config, &checkpoint).map_err(classify)?;
            let m = &artifacts.metrics;
            println!("{} ({} sample(s))", m.label, m.samples);
            println!("C-index: {}", m.c_index.formatted());
            println!("risk groups: {} high / {} low", m.high_risk, m.low_risk);
            match &m.log_rank {
                Some(lr) => println!("log-rank: {}", lr.formatted_p()),
                None => println!("log-rank: not applicable (one-sided stratification)"),
            }
            println!("wrote {}", artifacts.metrics_path.display());
            println!("wrote {}", artifacts.row_path.display());
            println!("wrote {}", artifacts.km_path.display());
            Ok(())
        }
        Command::Ablate {
            config,
            sweep,
            points,
            overrides,
        } => {
            let config = load_config(&config, &overrides)?;
            let sweep = parse_points(sweep, points.as_deref())?;
            let report = run_ablate(&config, &sweep).map_err(classify)?;
            let table = std::fs::read_to_string(&report.md_path)
                .context("reading ablation table")
                .map_err(CliError::Runtime)?;
            print!("{table}");
            let failures = report.rows.iter().filter(|r| r.error.is_some()).count();
            if failures > 0 {
                println!("{failures} sweep point(s) failed; see the error column");
            }
            println!("wrote {}", report.csv_path.display());
            println!("wrote {}", report.md_path.display());
            Ok(())
        }
        Command::KmExport {
            config,
            checkpoint,
            target,
            overrides,
        } => {
            let mut config = load_config(&config, &overrides)?;
            if let Some(target) = target {
                config.evaluation.eval_split = target;
            }
            let path = run_km_export(&config, &checkpoint).map_err(classify)?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}
