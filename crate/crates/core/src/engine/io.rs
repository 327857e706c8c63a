//! Rollout files: CSV or a compact binary table, each with a JSON sidecar
//! holding per-agent metadata.
//!
//! Binary layout, little endian:
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `RLT1` |
//! | 2 | version (1) |
//! | 2 | reserved (0) |
//! | 4 | agent count `n` |
//! | 4 | step count `h` |
//! | 8 | first step index |
//! | 8 | seed |
//! | 8·n | agent ids, i64 |
//! | 33·n·h | agent-major records: x, y, heading, speed as f64, valid as u8 |

use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::overrides::OverrideClass;
use crate::scenario::{ObjectType, TrackId};

use super::world::{AgentRollout, Rollout, SimState};

pub const MAGIC: &[u8; 4] = b"RLT1";
pub const VERSION: u16 = 1;
const RECORD_BYTES: usize = 33;

#[derive(Debug, Error)]
pub enum RolloutIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutFormat {
    Csv,
    Binary,
}

impl RolloutFormat {
    pub fn extension(self) -> &'static str {
        match self {
            RolloutFormat::Csv => "csv",
            RolloutFormat::Binary => "rlt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMeta {
    pub id: TrackId,
    pub object_type: ObjectType,
    pub class: OverrideClass,
    pub length: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutMeta {
    pub scenario_id: String,
    pub seed: u64,
    pub start_step: usize,
    pub horizon: usize,
    /// Steps before `start_step` are the recorded history, replayed verbatim.
    pub history_replayed: bool,
    /// Off-network ballistic agents stop once outside the scenario bounds.
    pub ballistic_frozen_at_bounds: bool,
    pub agents: Vec<AgentMeta>,
}

impl RolloutMeta {
    pub fn of(r: &Rollout) -> Self {
        RolloutMeta {
            scenario_id: r.scenario_id.clone(),
            seed: r.seed,
            start_step: r.start_step,
            horizon: r.horizon,
            history_replayed: true,
            ballistic_frozen_at_bounds: true,
            agents: r
                .agents
                .iter()
                .map(|a| AgentMeta { id: a.id, object_type: a.object_type, class: a.class, length: a.length, width: a.width })
                .collect(),
        }
    }
}

pub fn file_stem(scenario_id: &str, seed: u64) -> String {
    format!("{}_seed{seed}", crate::export::file_stem(scenario_id))
}

pub fn meta_path(data: &Path) -> PathBuf {
    data.with_extension("meta.json")
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RolloutIoError + '_ {
    move |source| RolloutIoError::Io { path: path.display().to_string(), source }
}

fn fmt_err(path: &Path, message: impl Into<String>) -> RolloutIoError {
    RolloutIoError::Format { path: path.display().to_string(), message: message.into() }
}

/// Writes `<dir>/<scenario>_seed<seed>.<ext>` plus its sidecar; returns the
/// data path.
pub fn write_rollout(dir: &Path, r: &Rollout, format: RolloutFormat) -> Result<PathBuf, RolloutIoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(format!("{}.{}", file_stem(&r.scenario_id, r.seed), format.extension()));
    match format {
        RolloutFormat::Csv => write_csv(&path, r)?,
        RolloutFormat::Binary => write_binary(&path, r)?,
    }
    let meta = meta_path(&path);
    let text = serde_json::to_string_pretty(&RolloutMeta::of(r)).expect("meta serializes");
    fs::write(&meta, text + "\n").map_err(io_err(&meta))?;
    Ok(path)
}

/// Reads a rollout file and its sidecar.
pub fn read_rollout(path: &Path) -> Result<Rollout, RolloutIoError> {
    let meta_file = meta_path(path);
    let text = fs::read_to_string(&meta_file).map_err(io_err(&meta_file))?;
    let meta: RolloutMeta = serde_json::from_str(&text).map_err(|e| fmt_err(&meta_file, e.to_string()))?;
    let (ids, states) = if path.extension().is_some_and(|e| e == "csv") { read_csv(path, &meta)? } else { read_binary(path)? };
    if ids.len() != meta.agents.len() || ids.iter().zip(&meta.agents).any(|(a, b)| *a != b.id) {
        return Err(fmt_err(path, "agent ids differ from the sidecar"));
    }
    let agents = meta
        .agents
        .iter()
        .zip(states)
        .map(|(m, states)| AgentRollout { id: m.id, object_type: m.object_type, length: m.length, width: m.width, class: m.class, states })
        .collect();
    Ok(Rollout { scenario_id: meta.scenario_id, seed: meta.seed, start_step: meta.start_step, horizon: meta.horizon, agents })
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    step: usize,
    agent_id: TrackId,
    x: f64,
    y: f64,
    heading: f64,
    speed: f64,
    valid: u8,
}

pub fn write_csv(path: &Path, r: &Rollout) -> Result<(), RolloutIoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| fmt_err(path, e.to_string()))?;
    for k in 0..r.horizon {
        for a in &r.agents {
            let s = a.states[k];
            let row = CsvRow { step: r.start_step + k, agent_id: a.id, x: s.x, y: s.y, heading: s.heading, speed: s.speed, valid: s.valid as u8 };
            w.serialize(row).map_err(|e| fmt_err(path, e.to_string()))?;
        }
    }
    w.flush().map_err(io_err(path))
}

fn read_csv(path: &Path, meta: &RolloutMeta) -> Result<(Vec<TrackId>, Vec<Vec<SimState>>), RolloutIoError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| fmt_err(path, e.to_string()))?;
    let ids: Vec<TrackId> = meta.agents.iter().map(|a| a.id).collect();
    let mut states = vec![Vec::with_capacity(meta.horizon); ids.len()];
    for (n, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| fmt_err(path, e.to_string()))?;
        let i = n % ids.len().max(1);
        if row.agent_id != ids[i] || row.step != meta.start_step + n / ids.len() {
            return Err(fmt_err(path, format!("row {} out of order", n + 1)));
        }
        states[i].push(SimState { x: row.x, y: row.y, heading: row.heading, speed: row.speed, valid: row.valid != 0 });
    }
    if states.iter().any(|s| s.len() != meta.horizon) {
        return Err(fmt_err(path, "record count does not match horizon"));
    }
    Ok((ids, states))
}

pub fn write_binary(path: &Path, r: &Rollout) -> Result<(), RolloutIoError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(io_err(path));
    put(MAGIC)?;
    put(&VERSION.to_le_bytes())?;
    put(&0u16.to_le_bytes())?;
    put(&(r.agents.len() as u32).to_le_bytes())?;
    put(&(r.horizon as u32).to_le_bytes())?;
    put(&(r.start_step as u64).to_le_bytes())?;
    put(&r.seed.to_le_bytes())?;
    for a in &r.agents {
        put(&a.id.to_le_bytes())?;
    }
    for a in &r.agents {
        for s in &a.states {
            for v in [s.x, s.y, s.heading, s.speed] {
                put(&v.to_le_bytes())?;
            }
            put(&[s.valid as u8])?;
        }
    }
    w.flush().map_err(io_err(path))
}

fn read_binary(path: &Path) -> Result<(Vec<TrackId>, Vec<Vec<SimState>>), RolloutIoError> {
    let mut bytes = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(io_err(path))?;
    if bytes.len() < 32 || &bytes[..4] != MAGIC {
        return Err(fmt_err(path, "not an RLT1 file"));
    }
    let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().expect("2 bytes"));
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let b8 = |o: usize| -> [u8; 8] { bytes[o..o + 8].try_into().expect("8 bytes") };
    if u16_at(4) != VERSION {
        return Err(fmt_err(path, format!("unsupported version {}", u16_at(4))));
    }
    let (n, h) = (u32_at(8), u32_at(12));
    let body = 32 + 8 * n;
    if bytes.len() != body + RECORD_BYTES * n * h {
        return Err(fmt_err(path, "truncated or oversized body"));
    }
    let ids = (0..n).map(|i| i64::from_le_bytes(b8(32 + 8 * i))).collect();
    let states = (0..n)
        .map(|i| {
            (0..h)
                .map(|k| {
                    let o = body + RECORD_BYTES * (i * h + k);
                    let f = |j: usize| f64::from_le_bytes(b8(o + 8 * j));
                    SimState { x: f(0), y: f(1), heading: f(2), speed: f(3), valid: bytes[o + 32] != 0 }
                })
                .collect()
        })
        .collect();
    Ok((ids, states))
}
