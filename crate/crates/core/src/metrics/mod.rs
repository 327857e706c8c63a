//! Realism scoring of rollouts against the recorded future.
//!
//! Every component is a histogram likelihood: ground-truth feature values of
//! an agent are binned with fixed edges, the same feature pooled over all
//! rollouts of that agent forms the simulated histogram (mixed with a small
//! uniform share), and the agent scores `exp(-KL(gt || sim))`. This is the
//! likelihood of the ground truth under the simulated distribution divided by
//! its likelihood under its own empirical distribution, so it lies in (0, 1]
//! and equals 1 only when the histograms agree. Agent scores are averaged per
//! component, components per group, and groups by the configured weights.

pub mod features;

use std::fs;
use std::io;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{BinSpec, MetricsConfig};
use crate::engine::{AgentRollout, Rollout, SimState};
use crate::geom::Point2;
use crate::overrides::OverrideClass;
use crate::scenario::{ObjectType, Scenario, TrackId};

pub use features::{kinematic_features, ttc, Body, Footprint, Kinematics, RoadEdges};

/// Reference values for the published SUMO baseline on the full benchmark.
/// They document scale only and are not reproduced here.
pub mod reference {
    pub const REALISM_META: f64 = 0.6532;
    pub const KINEMATIC: f64 = 0.3294;
    pub const INTERACTIVE: f64 = 0.7153;
    pub const MAP: f64 = 0.7585;
    pub const MIN_ADE: f64 = 5.8305;
    pub const LONG_HORIZON_COLLISION: f64 = 0.0047;
    pub const LONG_HORIZON_OFFROAD: f64 = 0.0073;
}

const BINARY: BinSpec = BinSpec::new(0.0, 2.0, 2);

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no rollouts to score for scenario {0}")]
    NoRollouts(String),
    #[error("rollout for scenario {rollout} does not belong to scenario {scenario}")]
    ScenarioMismatch { scenario: String, rollout: String },
    #[error("rollout of {scenario} (seed {seed}) starts at step {got}, expected {expected}")]
    StartMismatch { scenario: String, seed: u64, got: usize, expected: usize },
    #[error("rollouts of {scenario} have differing horizons {a} and {b}")]
    HorizonMismatch { scenario: String, a: usize, b: usize },
    #[error("rollout of {scenario} (seed {seed}) has agents {missing:?} missing and {extra:?} unknown")]
    AgentMismatch { scenario: String, seed: u64, missing: Vec<TrackId>, extra: Vec<TrackId> },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Absent entries were skipped for lack of samples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentScores {
    pub linear_speed: Option<f64>,
    pub linear_accel: Option<f64>,
    pub angular_speed: Option<f64>,
    pub angular_accel: Option<f64>,
    pub collision_indication: Option<f64>,
    pub distance_to_nearest: Option<f64>,
    pub ttc: Option<f64>,
    pub offroad_indication: Option<f64>,
    pub distance_to_road_edge: Option<f64>,
}

impl ComponentScores {
    fn named(&self) -> [(&'static str, Option<f64>); 9] {
        [
            ("linear_speed", self.linear_speed),
            ("linear_accel", self.linear_accel),
            ("angular_speed", self.angular_speed),
            ("angular_accel", self.angular_accel),
            ("collision_indication", self.collision_indication),
            ("distance_to_nearest", self.distance_to_nearest),
            ("ttc", self.ttc),
            ("offroad_indication", self.offroad_indication),
            ("distance_to_road_edge", self.distance_to_road_edge),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupScores {
    pub kinematic: Option<f64>,
    pub interactive: Option<f64>,
    pub map: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LongHorizon {
    pub collision_rate: f64,
    pub offroad_rate: f64,
    pub collision_pairs: usize,
    pub collision_total: usize,
    pub offroad_pairs: usize,
    pub offroad_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario_id: String,
    pub n_rollouts: usize,
    pub horizon: usize,
    /// Steps with recorded ground truth used for the likelihood components.
    pub evaluated_steps: usize,
    pub scored_agents: usize,
    pub components: ComponentScores,
    pub groups: GroupScores,
    /// Absent when every component was skipped.
    pub realism_meta: Option<f64>,
    /// Meters; absent when no rollout overlaps a valid ground-truth step.
    pub min_ade: Option<f64>,
    pub collision_rate: f64,
    pub offroad_rate: f64,
    pub long_horizon: LongHorizon,
    pub notes: Vec<String>,
}

fn sim_state(s: &crate::scenario::TrackState) -> SimState {
    SimState { x: s.x, y: s.y, heading: s.heading, speed: s.speed(), valid: true }
}

const INVALID: SimState = SimState { x: 0.0, y: 0.0, heading: 0.0, speed: 0.0, valid: false };

/// Number of recorded steps after the history.
pub fn future_steps(scenario: &Scenario) -> usize {
    let end = scenario.tracks.iter().filter_map(|t| t.states.iter().map(|s| s.time_index + 1).max()).max().unwrap_or(0);
    end.saturating_sub(scenario.history_length)
}

/// The recorded future as a rollout over `horizon` steps; steps without a
/// recorded state are invalid.
pub fn ground_truth_rollout(scenario: &Scenario, horizon: usize) -> Rollout {
    let start = scenario.history_length;
    let agents = scenario
        .tracks
        .iter()
        .map(|t| {
            let (length, width) = t.dims(scenario.current_step()).unwrap_or((0.0, 0.0));
            let states = (0..horizon).map(|k| t.state_at(start + k).map(sim_state).unwrap_or(INVALID)).collect();
            AgentRollout { id: t.id, object_type: t.object_type, length, width, class: OverrideClass::Normal, states }
        })
        .collect();
    Rollout { scenario_id: scenario.id.clone(), seed: 0, start_step: start, horizon, agents }
}

/// Agent indices scored for a scenario: tracks present at the current step.
pub fn scored_agents(scenario: &Scenario) -> Vec<usize> {
    let now = scenario.current_step();
    (0..scenario.tracks.len()).filter(|&i| scenario.tracks[i].state_at(now).is_some()).collect()
}

fn footprints(r: &Rollout, agents: &[usize], k: usize, pedestrian_diameter: f64) -> Vec<Option<Footprint>> {
    agents
        .iter()
        .map(|&i| {
            let a = &r.agents[i];
            let s = &a.states[k];
            s.valid.then(|| Footprint::new(s, a.object_type, a.length, a.width, pedestrian_diameter))
        })
        .collect()
}

fn contacts(fps: &[Option<Footprint>]) -> Vec<bool> {
    let mut hit = vec![false; fps.len()];
    for i in 0..fps.len() {
        let Some(a) = &fps[i] else { continue };
        for j in i + 1..fps.len() {
            if let Some(b) = &fps[j] {
                if a.overlaps(b) {
                    hit[i] = true;
                    hit[j] = true;
                }
            }
        }
    }
    hit
}

/// Per listed agent, whether its footprint touches another listed agent's at
/// any step in `steps`.
pub fn collision_indication(r: &Rollout, agents: &[usize], steps: Range<usize>, pedestrian_diameter: f64) -> Vec<bool> {
    let mut flag = vec![false; agents.len()];
    for k in steps {
        for (f, hit) in flag.iter_mut().zip(contacts(&footprints(r, agents, k, pedestrian_diameter))) {
            *f |= hit;
        }
    }
    flag
}

/// Per listed agent, whether its center leaves the drivable side of the road
/// edges at any valid step in `steps`. Always false without road edges.
pub fn offroad_indication(r: &Rollout, agents: &[usize], steps: Range<usize>, edges: &RoadEdges) -> Vec<bool> {
    agents
        .iter()
        .map(|&i| {
            let a = &r.agents[i];
            a.states[steps.clone()].iter().any(|s| s.valid && edges.signed_distance(Point2::new(s.x, s.y)) < 0.0)
        })
        .collect()
}

/// Feature samples of one agent over the evaluation window.
#[derive(Debug, Clone, Default)]
struct AgentSamples {
    speed: Vec<f64>,
    accel: Vec<f64>,
    angular_speed: Vec<f64>,
    angular_accel: Vec<f64>,
    distance_to_nearest: Vec<f64>,
    ttc: Vec<f64>,
    distance_to_road_edge: Vec<f64>,
    collided: bool,
    offroad: bool,
    any_valid: bool,
}

struct Setup<'a> {
    scenario: &'a Scenario,
    agents: &'a [usize],
    window: usize,
    edges: &'a RoadEdges,
    cfg: &'a MetricsConfig,
}

fn samples(setup: &Setup, r: &Rollout) -> Vec<AgentSamples> {
    let Setup { scenario, agents, window, edges, cfg } = *setup;
    let now = scenario.current_step();
    let dt = scenario.timestep_s;
    let mut out: Vec<AgentSamples> = agents
        .iter()
        .map(|&i| {
            let a = &r.agents[i];
            let mut seq = Vec::with_capacity(window + 1);
            seq.push(scenario.tracks[i].state_at(now).map(sim_state).unwrap_or(INVALID));
            seq.extend_from_slice(&a.states[..window]);
            let k = kinematic_features(&seq, dt);
            let vals = |v: &[Option<f64>]| v.iter().flatten().copied().collect::<Vec<f64>>();
            AgentSamples {
                speed: vals(&k.speed),
                accel: vals(&k.accel),
                angular_speed: vals(&k.angular_speed),
                angular_accel: vals(&k.angular_accel),
                any_valid: a.states[..window].iter().any(|s| s.valid),
                ..AgentSamples::default()
            }
        })
        .collect();
    for k in 0..window {
        let fps = footprints(r, agents, k, cfg.pedestrian_diameter);
        let bodies: Vec<Option<Body>> = agents
            .iter()
            .map(|&i| {
                let a = &r.agents[i];
                let s = &a.states[k];
                s.valid.then(|| Body { center: Point2::new(s.x, s.y), heading: s.heading, speed: s.speed, length: a.length, width: a.width })
            })
            .collect();
        let hits = contacts(&fps);
        for (n, fp) in fps.iter().enumerate() {
            let Some(fp) = fp else { continue };
            let smp = &mut out[n];
            smp.collided |= hits[n];
            let nearest = fps.iter().enumerate().filter(|&(m, o)| m != n && o.is_some()).map(|(_, o)| fp.distance(o.as_ref().unwrap())).fold(f64::INFINITY, f64::min);
            if nearest.is_finite() {
                smp.distance_to_nearest.push(nearest);
            }
            let me = bodies[n].expect("valid agent has a body");
            let others: Vec<Body> = bodies.iter().enumerate().filter(|&(m, _)| m != n).filter_map(|(_, b)| *b).collect();
            smp.ttc.push(ttc(&me, &others));
            if !edges.is_empty() {
                let d = edges.signed_distance(fp.center());
                smp.offroad |= d < 0.0;
                smp.distance_to_road_edge.push(d);
            }
        }
    }
    out
}

/// `exp(-KL(p || q))` for the empirical histogram `p` of `gt` and the
/// smoothed histogram `q` of `sim`.
pub fn histogram_likelihood(gt: &[f64], sim: &[f64], bins: &BinSpec, smoothing: f64) -> Option<f64> {
    if gt.is_empty() || sim.is_empty() {
        return None;
    }
    let hist = |v: &[f64]| {
        let mut h = vec![0.0; bins.bins];
        for &x in v {
            h[bins.index(x)] += 1.0 / v.len() as f64;
        }
        h
    };
    let p = hist(gt);
    let q = hist(sim);
    let uniform = 1.0 / bins.bins as f64;
    let kl: f64 = p
        .iter()
        .zip(&q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / ((1.0 - smoothing) * qi + smoothing * uniform)).ln())
        .sum();
    Some((-kl.max(0.0)).exp().clamp(0.0, 1.0))
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn flags(v: bool) -> f64 {
    if v {
        1.0
    } else {
        0.0
    }
}

fn components(gt: &[AgentSamples], sims: &[Vec<AgentSamples>], cfg: &MetricsConfig, edges: &RoadEdges) -> ComponentScores {
    let score = |get: &dyn Fn(&AgentSamples) -> Vec<f64>, bins: &BinSpec| -> Option<f64> {
        let per_agent: Vec<f64> = (0..gt.len())
            .filter_map(|n| {
                let sim: Vec<f64> = sims.iter().flat_map(|r| get(&r[n])).collect();
                histogram_likelihood(&get(&gt[n]), &sim, bins, cfg.smoothing)
            })
            .collect();
        mean(&per_agent)
    };
    let flag = |get: fn(&AgentSamples) -> bool| {
        move |a: &AgentSamples| if a.any_valid { vec![flags(get(a))] } else { vec![] }
    };
    let has_edges = !edges.is_empty();
    ComponentScores {
        linear_speed: score(&|a| a.speed.clone(), &cfg.linear_speed),
        linear_accel: score(&|a| a.accel.clone(), &cfg.linear_accel),
        angular_speed: score(&|a| a.angular_speed.clone(), &cfg.angular_speed),
        angular_accel: score(&|a| a.angular_accel.clone(), &cfg.angular_accel),
        collision_indication: score(&flag(|a| a.collided), &BINARY),
        distance_to_nearest: score(&|a| a.distance_to_nearest.clone(), &cfg.distance_to_nearest),
        ttc: score(&|a| a.ttc.clone(), &cfg.ttc),
        offroad_indication: if has_edges { score(&flag(|a| a.offroad), &BINARY) } else { None },
        distance_to_road_edge: score(&|a| a.distance_to_road_edge.clone(), &cfg.distance_to_road_edge),
    }
}

fn groups(c: &ComponentScores) -> GroupScores {
    let avg = |v: &[Option<f64>]| mean(&v.iter().flatten().copied().collect::<Vec<_>>());
    GroupScores {
        kinematic: avg(&[c.linear_speed, c.linear_accel, c.angular_speed, c.angular_accel]),
        interactive: avg(&[c.collision_indication, c.distance_to_nearest, c.ttc]),
        map: avg(&[c.offroad_indication, c.distance_to_road_edge]),
    }
}

fn meta(g: &GroupScores, cfg: &MetricsConfig) -> Option<f64> {
    let parts = [(g.kinematic, cfg.kinematic_weight), (g.interactive, cfg.interactive_weight), (g.map, cfg.map_weight)];
    let (num, den) = parts.iter().filter_map(|&(s, w)| s.map(|s| (s * w, w))).fold((0.0, 0.0), |(n, d), (a, b)| (n + a, d + b));
    (den > 0.0).then(|| (num / den).clamp(0.0, 1.0))
}

/// Minimum over rollouts of the mean displacement over every (agent, step)
/// pair valid in both the rollout and the ground truth.
pub fn min_ade(rollouts: &[Rollout], gt: &Rollout, agents: &[usize]) -> Option<f64> {
    rollouts
        .iter()
        .filter_map(|r| {
            let (mut sum, mut n) = (0.0, 0usize);
            for &i in agents {
                let horizon = gt.horizon.min(r.horizon);
                for (s, g) in r.agents[i].states[..horizon].iter().zip(&gt.agents[i].states[..horizon]) {
                    if s.valid && g.valid {
                        sum += (s.x - g.x).hypot(s.y - g.y);
                        n += 1;
                    }
                }
            }
            (n > 0).then(|| sum / n as f64)
        })
        .min_by(f64::total_cmp)
}

/// Collision and offroad rates over (agent, rollout) pairs across each full
/// rollout. Off-network ballistic agents and pedestrians are left out of the
/// offroad count; invalid steps, including those after an agent leaves the
/// map, are never scored.
pub fn long_horizon(rollouts: &[Rollout], agents: &[usize], edges: &RoadEdges, cfg: &MetricsConfig) -> LongHorizon {
    let per: Vec<(usize, usize, usize, usize)> = rollouts
        .par_iter()
        .map(|r| {
            let steps = 0..r.horizon;
            let present: Vec<usize> = agents.iter().copied().filter(|&i| r.agents[i].states.iter().any(|s| s.valid)).collect();
            let coll = collision_indication(r, &present, steps.clone(), cfg.pedestrian_diameter);
            let road: Vec<usize> = present
                .iter()
                .copied()
                .filter(|&i| r.agents[i].class != OverrideClass::OffnetBallistic && r.agents[i].object_type != ObjectType::Pedestrian)
                .collect();
            let off = offroad_indication(r, &road, steps, edges);
            (coll.iter().filter(|&&c| c).count(), coll.len(), off.iter().filter(|&&o| o).count(), off.len())
        })
        .collect();
    let (cp, ct, op, ot) = per.iter().fold((0, 0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3));
    let rate = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    LongHorizon { collision_rate: rate(cp, ct), offroad_rate: rate(op, ot), collision_pairs: cp, collision_total: ct, offroad_pairs: op, offroad_total: ot }
}

fn check(scenario: &Scenario, rollouts: &[Rollout]) -> Result<usize, MetricsError> {
    let first = rollouts.first().ok_or_else(|| MetricsError::NoRollouts(scenario.id.clone()))?;
    let ids: Vec<TrackId> = scenario.tracks.iter().map(|t| t.id).collect();
    for r in rollouts {
        if r.scenario_id != scenario.id {
            return Err(MetricsError::ScenarioMismatch { scenario: scenario.id.clone(), rollout: r.scenario_id.clone() });
        }
        if r.start_step != scenario.history_length {
            return Err(MetricsError::StartMismatch { scenario: scenario.id.clone(), seed: r.seed, got: r.start_step, expected: scenario.history_length });
        }
        if r.horizon != first.horizon {
            return Err(MetricsError::HorizonMismatch { scenario: scenario.id.clone(), a: first.horizon, b: r.horizon });
        }
        let got: Vec<TrackId> = r.agents.iter().map(|a| a.id).collect();
        if got != ids || r.agents.iter().any(|a| a.states.len() != r.horizon) {
            let missing = ids.iter().copied().filter(|i| !got.contains(i)).collect();
            let extra = got.iter().copied().filter(|i| !ids.contains(i)).collect();
            return Err(MetricsError::AgentMismatch { scenario: scenario.id.clone(), seed: r.seed, missing, extra });
        }
    }
    Ok(first.horizon)
}

/// Scores a scenario's rollouts against its recorded future.
pub fn evaluate(scenario: &Scenario, rollouts: &[Rollout], cfg: &MetricsConfig) -> Result<MetricsReport, MetricsError> {
    let horizon = check(scenario, rollouts)?;
    let mut notes = Vec::new();
    let agents = scored_agents(scenario);
    let window = horizon.min(future_steps(scenario));
    if window < horizon {
        notes.push(format!("likelihood components use the {window} recorded future steps of a {horizon}-step horizon"));
    }
    let edges = RoadEdges::new(scenario);
    if edges.is_empty() {
        log::warn!("{}: no road edges; road-edge distances are infinite and offroad flags false", scenario.id);
        notes.push("no road edges: offroad components skipped".into());
    }
    let gt = ground_truth_rollout(scenario, window);
    let setup = Setup { scenario, agents: &agents, window, edges: &edges, cfg };
    let gt_samples = samples(&setup, &gt);
    let sim_samples: Vec<Vec<AgentSamples>> = rollouts.par_iter().map(|r| samples(&setup, r)).collect();
    let components = components(&gt_samples, &sim_samples, cfg, &edges);
    for (name, v) in components.named() {
        if v.is_none() {
            notes.push(format!("{name} skipped: no samples"));
        }
    }
    let groups = groups(&components);
    let realism_meta = meta(&groups, cfg);
    let lh = long_horizon(rollouts, &agents, &edges, cfg);
    Ok(MetricsReport {
        scenario_id: scenario.id.clone(),
        n_rollouts: rollouts.len(),
        horizon,
        evaluated_steps: window,
        scored_agents: agents.len(),
        components,
        groups,
        realism_meta,
        min_ade: min_ade(rollouts, &gt, &agents),
        collision_rate: lh.collision_rate,
        offroad_rate: lh.offroad_rate,
        long_horizon: lh,
        notes,
    })
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    scenario_id: &'a str,
    n_rollouts: usize,
    horizon: usize,
    realism_meta: Option<f64>,
    kinematic: Option<f64>,
    interactive: Option<f64>,
    map: Option<f64>,
    linear_speed: Option<f64>,
    linear_accel: Option<f64>,
    angular_speed: Option<f64>,
    angular_accel: Option<f64>,
    collision_indication: Option<f64>,
    distance_to_nearest: Option<f64>,
    ttc: Option<f64>,
    offroad_indication: Option<f64>,
    distance_to_road_edge: Option<f64>,
    min_ade: Option<f64>,
    collision_rate: f64,
    offroad_rate: f64,
}

/// One row per report; skipped values are empty cells.
pub fn summary_csv(reports: &[MetricsReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        let c = &r.components;
        w.serialize(SummaryRow {
            scenario_id: &r.scenario_id,
            n_rollouts: r.n_rollouts,
            horizon: r.horizon,
            realism_meta: r.realism_meta,
            kinematic: r.groups.kinematic,
            interactive: r.groups.interactive,
            map: r.groups.map,
            linear_speed: c.linear_speed,
            linear_accel: c.linear_accel,
            angular_speed: c.angular_speed,
            angular_accel: c.angular_accel,
            collision_indication: c.collision_indication,
            distance_to_nearest: c.distance_to_nearest,
            ttc: c.ttc,
            offroad_indication: c.offroad_indication,
            distance_to_road_edge: c.distance_to_road_edge,
            min_ade: r.min_ade,
            collision_rate: r.collision_rate,
            offroad_rate: r.offroad_rate,
        })
        .expect("summary row serializes");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

pub fn write_report(path: &Path, report: &MetricsReport) -> Result<(), MetricsError> {
    let text = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    fs::write(path, text).map_err(|source| MetricsError::Io { path: path.display().to_string(), source })
}
