//! Per-scenario stages behind the command line: convert, simulate and
//! evaluate, plus a worker pool that isolates failures per scenario.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::engine::io::{meta_path, read_rollout, write_rollout, RolloutFormat, RolloutIoError};
use crate::engine::{self, Rollout};
use crate::export::{export_bundle, file_stem, write_bundle, ExportError};
use crate::metrics::{self, MetricsError, MetricsReport};
use crate::net::{build_network, lane_coverage, BuildError, Network, NodeId};
use crate::scenario::{load_scenario, Scenario, ScenarioError};
use crate::signal::{estimate_signals, SignalProgram};

/// Distance within which an original lane point counts as covered.
pub const COVERAGE_TOLERANCE_M: f64 = 2.0;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    Rollout(#[from] RolloutIoError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Input(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes") + "\n";
    fs::write(path, text).map_err(io_err(path))
}

/// Scenario files named by `input`: the file itself, or every `.json` file
/// directly inside a directory, sorted by name.
pub fn discover(input: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        return Err(PipelineError::Input(format!("{}: no such file or directory", input.display())));
    }
    let mut out: Vec<PathBuf> = fs::read_dir(input)
        .map_err(io_err(input))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "json"))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(PipelineError::Input(format!("{}: no scenario files", input.display())));
    }
    Ok(out)
}

/// Result of one scenario in a batch.
#[derive(Debug, Clone)]
pub struct Outcome<T> {
    pub source: String,
    pub result: Result<T, String>,
}

/// Runs `f` on every path using `workers` threads; results keep input order.
pub fn batch<T, F>(paths: &[PathBuf], workers: usize, f: F) -> Vec<Outcome<T>>
where
    T: Send,
    F: Fn(&Path) -> Result<T, PipelineError> + Sync,
{
    let run = || {
        paths
            .par_iter()
            .map(|p| {
                let result = f(p).map_err(|e| {
                    log::error!("{}: {e}", p.display());
                    e.to_string()
                });
                Outcome { source: p.display().to_string(), result }
            })
            .collect()
    };
    match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionReport {
    pub scenario_id: String,
    pub lane_centers: usize,
    pub edges: usize,
    pub lanes: usize,
    pub nodes: usize,
    pub connections: usize,
    pub signalized_nodes: usize,
    pub agents: usize,
    pub exported_vehicles: usize,
    /// Share of drivable lane-center points within the coverage tolerance of
    /// the network.
    pub coverage_ratio: f64,
    pub warnings: Vec<String>,
    pub files: Vec<String>,
}

pub struct Prepared {
    pub network: Network,
    pub programs: BTreeMap<NodeId, SignalProgram>,
}

/// Network and signal programs covering history plus horizon.
pub fn prepare(scenario: &Scenario, cfg: &RunConfig) -> Result<Prepared, PipelineError> {
    cfg.validate_for(scenario.history_length)?;
    let network = build_network(scenario, &cfg.net)?;
    let programs = estimate_signals(&network, scenario, &cfg.signal, scenario.history_length + cfg.horizon_steps);
    Ok(Prepared { network, programs })
}

/// Builds the network and writes the SUMO bundle into `out/<scenario>/`.
pub fn convert_scenario(scenario: &Scenario, cfg: &RunConfig, out: &Path) -> Result<ConversionReport, PipelineError> {
    let Prepared { network, programs } = prepare(scenario, cfg)?;
    let demand = engine::prepare_demand(scenario, &network, &programs, cfg, cfg.seed);
    let bundle = export_bundle(&scenario.id, &network, &programs, &demand, scenario.current_step(), scenario.timestep_s)?;
    let dir = out.join(file_stem(&scenario.id));
    let written = write_bundle(&dir, &bundle)?;
    let mut warnings = network.warnings.clone();
    warnings.extend(programs.values().flat_map(|p| p.warnings.iter().cloned()));
    warnings.extend(demand.warnings.iter().cloned());
    warnings.extend(bundle.warnings.iter().cloned());
    Ok(ConversionReport {
        scenario_id: scenario.id.clone(),
        lane_centers: scenario.lane_centers.len(),
        edges: network.edges.len(),
        lanes: network.edges.iter().map(|e| e.lanes.len()).sum(),
        nodes: network.nodes.len(),
        connections: network.connections.len(),
        signalized_nodes: network.nodes.iter().filter(|n| n.signalized).count(),
        agents: scenario.tracks.len(),
        exported_vehicles: bundle.routes_doc.matches("<vehicle ").count(),
        coverage_ratio: lane_coverage(scenario, &network, COVERAGE_TOLERANCE_M),
        warnings,
        files: written.iter().filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned())).collect(),
    })
}

/// Echo of the run written next to the rollout files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario_id: String,
    pub n_rollouts: usize,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub format: RolloutFormat,
    pub files: Vec<String>,
    pub config: RunConfig,
}

/// Runs every rollout and writes them into `out/<scenario>/` with a
/// `run.json` echo of the configuration.
pub fn simulate_scenario(scenario: &Scenario, cfg: &RunConfig, out: &Path, format: RolloutFormat) -> Result<RunRecord, PipelineError> {
    let Prepared { network, programs } = prepare(scenario, cfg)?;
    let rollouts = engine::rollouts_in_pool(scenario, &network, &programs, cfg);
    let dir = out.join(file_stem(&scenario.id));
    let mut files = Vec::new();
    for r in &rollouts {
        let path = write_rollout(&dir, r, format)?;
        files.push(path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    }
    let record = RunRecord {
        scenario_id: scenario.id.clone(),
        n_rollouts: rollouts.len(),
        horizon: cfg.horizon_steps,
        seeds: rollouts.iter().map(|r| r.seed).collect(),
        format,
        files,
        config: cfg.clone(),
    };
    write_json(&dir.join("run.json"), &record)?;
    Ok(record)
}

fn rollout_files(dir: &Path, out: &mut Vec<PathBuf>, depth: usize) -> Result<(), PipelineError> {
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() && depth > 0 {
            rollout_files(&path, out, depth - 1)?;
        } else if path.extension().is_some_and(|e| e == "csv" || e == "rlt") && meta_path(&path).is_file() {
            out.push(path);
        }
    }
    Ok(())
}

/// Rollouts under `dir` and its immediate subdirectories, grouped by
/// scenario id and sorted by seed.
pub fn load_rollouts(dir: &Path) -> Result<BTreeMap<String, Vec<Rollout>>, PipelineError> {
    if !dir.is_dir() {
        return Err(PipelineError::Input(format!("{}: not a rollout directory", dir.display())));
    }
    let mut paths = Vec::new();
    rollout_files(dir, &mut paths, 1)?;
    paths.sort();
    let mut by_id: BTreeMap<String, Vec<Rollout>> = BTreeMap::new();
    for p in paths {
        let r = read_rollout(&p)?;
        by_id.entry(r.scenario_id.clone()).or_default().push(r);
    }
    for v in by_id.values_mut() {
        v.sort_by_key(|r| r.seed);
    }
    Ok(by_id)
}

/// Scores the rollouts recorded for `scenario` and writes
/// `out/<scenario>.report.json`.
pub fn evaluate_scenario(scenario: &Scenario, rollouts: &BTreeMap<String, Vec<Rollout>>, cfg: &RunConfig, out: &Path) -> Result<MetricsReport, PipelineError> {
    let Some(rs) = rollouts.get(&scenario.id) else {
        let found: Vec<&str> = rollouts.keys().map(String::as_str).collect();
        return Err(PipelineError::Input(format!("no rollouts for scenario {}; rollouts found for {found:?}", scenario.id)));
    };
    let report = metrics::evaluate(scenario, rs, &cfg.metrics)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    metrics::write_report(&out.join(format!("{}.report.json", file_stem(&scenario.id))), &report)?;
    Ok(report)
}

pub fn load(path: &Path) -> Result<Scenario, PipelineError> {
    Ok(load_scenario(path)?)
}
