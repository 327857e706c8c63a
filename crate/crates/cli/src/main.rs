//! `trafsim`: convert scenarios to networks, roll them out, score the
//! rollouts and summarize the scores.
//!
//! Exit status is 0 when every scenario succeeds, 1 when at least one
//! scenario in a batch fails, and 2 on configuration or I/O errors that stop
//! the command before or after the batch.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use trafsim_core::config::RunConfig;
use trafsim_core::engine::io::RolloutFormat;
use trafsim_core::metrics::{summary_csv, MetricsReport};
use trafsim_core::pipeline::{self, batch, discover, Outcome, PipelineError};
use trafsim_core::report::{load_reports, write_report_artifacts};

#[derive(Parser)]
#[command(name = "trafsim", version, about = "Lane-graph conversion, stochastic rollouts and realism scoring")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by all commands; each overrides the config file.
#[derive(Args)]
struct Global {
    /// TOML or JSON run configuration.
    #[arg(long, global = true, env = "TRAFSIM_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "TRAFSIM_SEED")]
    seed: Option<u64>,
    /// Simulated steps per rollout.
    #[arg(long, global = true, env = "TRAFSIM_HORIZON")]
    horizon: Option<usize>,
    /// Rollouts per scenario.
    #[arg(long, global = true, env = "TRAFSIM_ROLLOUTS")]
    rollouts: Option<usize>,
    /// Worker threads shared by scenarios and rollouts.
    #[arg(long, global = true, env = "TRAFSIM_WORKERS")]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build networks and write SUMO plain-XML bundles.
    Convert {
        /// Scenario file or directory of scenario files.
        input: PathBuf,
        #[arg(long, default_value = "out", env = "TRAFSIM_OUT")]
        out: PathBuf,
    },
    /// Run stochastic rollouts and write one file per seed.
    Simulate {
        input: PathBuf,
        #[arg(long, default_value = "out", env = "TRAFSIM_OUT")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Score rollouts against their scenarios.
    Evaluate {
        /// Directory written by `simulate`.
        #[arg(value_name = "ROLLOUTS")]
        rollout_dir: PathBuf,
        /// Scenario file or directory of scenario files.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "out", env = "TRAFSIM_OUT")]
        out: PathBuf,
    },
    /// Aggregate report files into tables and histograms.
    Report {
        /// Directory of `*.report.json` files.
        dir: PathBuf,
        #[arg(long, default_value = "out", env = "TRAFSIM_OUT")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Binary,
}

impl From<Format> for RolloutFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => RolloutFormat::Csv,
            Format::Binary => RolloutFormat::Binary,
        }
    }
}

const EXIT_PARTIAL: u8 = 1;
const EXIT_FATAL: u8 = 2;

fn run_config(g: &Global) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = g.horizon {
        cfg.horizon_steps = v;
    }
    if let Some(v) = g.rollouts {
        cfg.n_rollouts = v;
    }
    if let Some(v) = g.workers {
        cfg.workers = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One batch entry as written to the batch summary files.
#[derive(Serialize)]
struct Entry<'a, T> {
    source: &'a str,
    ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<&'a T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

fn entries<T>(outcomes: &[Outcome<T>]) -> Vec<Entry<'_, T>> {
    outcomes
        .iter()
        .map(|o| Entry {
            source: &o.source,
            ok: o.result.is_ok(),
            report: o.result.as_ref().ok(),
            error: o.result.as_ref().err().map(String::as_str),
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.display().to_string(), source })?;
    }
    fs::write(path, text).map_err(|source| PipelineError::Io { path: path.display().to_string(), source })
}

fn finish<T>(outcomes: &[Outcome<T>], what: &str) -> u8 {
    let failed: Vec<&Outcome<T>> = outcomes.iter().filter(|o| o.result.is_err()).collect();
    for o in &failed {
        eprintln!("error: {}: {}", o.source, o.result.as_ref().err().map(String::as_str).unwrap_or_default());
    }
    println!("{what}: {} ok, {} failed", outcomes.len() - failed.len(), failed.len());
    if failed.is_empty() {
        0
    } else {
        EXIT_PARTIAL
    }
}

fn run(cli: Cli) -> Result<u8, PipelineError> {
    let cfg = run_config(&cli.global)?;
    match cli.command {
        Command::Convert { input, out } => {
            let paths = discover(&input)?;
            let outcomes = batch(&paths, cfg.workers, |p| pipeline::convert_scenario(&pipeline::load(p)?, &cfg, &out));
            let text = serde_json::to_string_pretty(&entries(&outcomes)).expect("entries serialize") + "\n";
            write_text(&out.join("conversion_report.json"), &text)?;
            Ok(finish(&outcomes, "convert"))
        }
        Command::Simulate { input, out, format } => {
            let paths = discover(&input)?;
            let outcomes = batch(&paths, cfg.workers, |p| pipeline::simulate_scenario(&pipeline::load(p)?, &cfg, &out, format.into()));
            Ok(finish(&outcomes, "simulate"))
        }
        Command::Evaluate { rollout_dir, scenario, out } => {
            let paths = discover(&scenario)?;
            let by_id = pipeline::load_rollouts(&rollout_dir)?;
            let outcomes = batch(&paths, cfg.workers, |p| pipeline::evaluate_scenario(&pipeline::load(p)?, &by_id, &cfg, &out));
            let ok: Vec<MetricsReport> = outcomes.iter().filter_map(|o| o.result.as_ref().ok().cloned()).collect();
            write_text(&out.join("summary.csv"), &summary_csv(&ok))?;
            Ok(finish(&outcomes, "evaluate"))
        }
        Command::Report { dir, out } => {
            let reports = load_reports(&dir)?;
            let files = write_report_artifacts(&reports, &out)?;
            println!("report: {} reports, {} files in {}", reports.len(), files.len(), out.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FATAL)
        }
    }
}
