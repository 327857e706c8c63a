//! Canonical scenario model: map features, signal observations and agent
//! tracks, loaded from the JSON schema documented in the README.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, Point2};

pub type LaneId = i64;
pub type TrackId = i64;

/// Fixed sampling period of every scenario.
pub const TIMESTEP_S: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneType {
    SurfaceStreet,
    Freeway,
    BikeLane,
}

impl LaneType {
    pub fn is_drivable(self) -> bool {
        !matches!(self, LaneType::BikeLane)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjacency {
    pub neighbor_id: LaneId,
    pub self_start_index: usize,
    pub self_end_index: usize,
    pub neighbor_start_index: usize,
    pub neighbor_end_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneCenter {
    pub id: LaneId,
    pub polyline: Vec<Point2>,
    pub lane_type: LaneType,
    /// meters/second
    pub speed_limit: f64,
    /// Optional lane width in meters; a default is applied during conversion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default)]
    pub entry_ids: Vec<LaneId>,
    #[serde(default)]
    pub exit_ids: Vec<LaneId>,
    #[serde(default)]
    pub left_neighbors: Vec<Adjacency>,
    #[serde(default)]
    pub right_neighbors: Vec<Adjacency>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadEdge {
    pub id: i64,
    /// Oriented so that the drivable area lies to the left of travel.
    pub polyline: Vec<Point2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalState {
    Red,
    Yellow,
    Green,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalObservation {
    pub time_index: usize,
    pub lane_id: LaneId,
    pub state: SignalState,
    pub stop_point: Point2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectType {
    Vehicle,
    Pedestrian,
    Cyclist,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackState {
    pub time_index: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
    pub length: f64,
    pub width: f64,
    pub valid: bool,
}

impl TrackState {
    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub id: TrackId,
    pub object_type: ObjectType,
    pub states: Vec<TrackState>,
}

impl AgentTrack {
    pub fn state_at(&self, t: usize) -> Option<&TrackState> {
        self.states
            .binary_search_by_key(&t, |s| s.time_index)
            .ok()
            .map(|i| &self.states[i])
            .filter(|s| s.valid)
    }

    /// Valid states with `time_index < history_length`.
    pub fn history(&self, history_length: usize) -> impl Iterator<Item = &TrackState> {
        self.states.iter().filter(move |s| s.valid && s.time_index < history_length)
    }

    /// Length and width from the most recent valid state.
    pub fn dims(&self, up_to: usize) -> Option<(f64, f64)> {
        self.states
            .iter()
            .rev()
            .find(|s| s.valid && s.time_index <= up_to)
            .or_else(|| self.states.iter().find(|s| s.valid))
            .map(|s| (s.length, s.width))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub timestep_s: f64,
    pub history_length: usize,
    pub lane_centers: Vec<LaneCenter>,
    #[serde(default)]
    pub road_edges: Vec<RoadEdge>,
    #[serde(default)]
    pub stop_sign_lane_ids: Vec<LaneId>,
    #[serde(default)]
    pub signal_observations: Vec<SignalObservation>,
    #[serde(default)]
    pub tracks: Vec<AgentTrack>,
}

impl Scenario {
    /// Index of the current (last history) step.
    pub fn current_step(&self) -> usize {
        self.history_length - 1
    }

    pub fn lane(&self, id: LaneId) -> Option<&LaneCenter> {
        self.lane_centers.iter().find(|l| l.id == id)
    }

    pub fn track(&self, id: TrackId) -> Option<&AgentTrack> {
        self.tracks.iter().find(|t| t.id == id)
    }

    /// Axis-aligned bounds over map features, as (min, max).
    pub fn bounds(&self) -> (Point2, Point2) {
        let mut min = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        let pts = self
            .lane_centers
            .iter()
            .flat_map(|l| l.polyline.iter())
            .chain(self.road_edges.iter().flat_map(|e| e.polyline.iter()));
        for p in pts {
            min = Point2::new(min.x.min(p.x), min.y.min(p.y));
            max = Point2::new(max.x.max(p.x), max.y.max(p.y));
        }
        (min, max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationIssue {
    pub path: String,
    pub message: String,
    /// Offending or dangling ids, when the issue is about references.
    pub ids: Vec<i64>,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)?;
        if !self.ids.is_empty() {
            write!(f, " (ids: {:?})", self.ids)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("scenario failed validation with {} issue(s): {}", .0.len(), join_issues(.0))]
    Validation(Vec<ValidationIssue>),
}

fn join_issues(issues: &[ValidationIssue]) -> String {
    issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; ")
}

impl ScenarioError {
    /// Every id named by a validation failure.
    pub fn ids(&self) -> Vec<i64> {
        match self {
            ScenarioError::Validation(issues) => issues.iter().flat_map(|i| i.ids.iter().copied()).collect(),
            _ => vec![],
        }
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    validate(&scenario)?;
    Ok(scenario)
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(scenario).expect("scenario serializes");
    fs::write(path, text).map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })
}

/// Checks every invariant and reports all violations at once.
pub fn validate(s: &Scenario) -> Result<(), ScenarioError> {
    let mut issues = Vec::new();
    let mut issue = |path: String, message: &str, ids: Vec<i64>| {
        issues.push(ValidationIssue { path, message: message.to_string(), ids });
    };

    if (s.timestep_s - TIMESTEP_S).abs() > 1e-9 {
        issue("timestep_s".into(), "timestep must be 0.1 s", vec![]);
    }
    if s.history_length < 1 {
        issue("history_length".into(), "history_length must be >= 1", vec![]);
    }

    let mut lane_ids: HashMap<LaneId, usize> = HashMap::new();
    for (i, lane) in s.lane_centers.iter().enumerate() {
        if lane_ids.insert(lane.id, i).is_some() {
            issue(format!("lane_centers[{i}].id"), "duplicate lane id", vec![lane.id]);
        }
    }

    for (i, lane) in s.lane_centers.iter().enumerate() {
        let base = format!("lane_centers[{i}]");
        if lane.polyline.len() < 2 {
            issue(format!("{base}.polyline"), "lane polyline needs at least 2 points", vec![lane.id]);
        }
        if lane.polyline.iter().any(|p| !p.is_finite()) {
            issue(format!("{base}.polyline"), "non-finite coordinate", vec![lane.id]);
        }
        if lane.polyline.windows(2).any(|w| w[0] == w[1]) {
            issue(format!("{base}.polyline"), "repeated consecutive point", vec![lane.id]);
        }
        if !lane.speed_limit.is_finite() || lane.speed_limit < 0.0 {
            issue(format!("{base}.speed_limit"), "speed limit must be finite and >= 0", vec![lane.id]);
        }
        if let Some(w) = lane.width {
            if !(w.is_finite() && w > 0.0) {
                issue(format!("{base}.width"), "lane width must be > 0", vec![lane.id]);
            }
        }
        for (field, ids) in [("entry_ids", &lane.entry_ids), ("exit_ids", &lane.exit_ids)] {
            let dangling: Vec<i64> = ids.iter().copied().filter(|id| !lane_ids.contains_key(id)).collect();
            if !dangling.is_empty() {
                issue(format!("{base}.{field}"), "references missing lane", dangling);
            }
        }
        for (field, adjs) in [("left_neighbors", &lane.left_neighbors), ("right_neighbors", &lane.right_neighbors)] {
            for (k, adj) in adjs.iter().enumerate() {
                let path = format!("{base}.{field}[{k}]");
                if adj.self_start_index > adj.self_end_index || adj.neighbor_start_index > adj.neighbor_end_index {
                    issue(path.clone(), "adjacency start index exceeds end index", vec![adj.neighbor_id]);
                }
                if adj.self_end_index >= lane.polyline.len() {
                    issue(path.clone(), "self index range outside polyline", vec![lane.id]);
                }
                match lane_ids.get(&adj.neighbor_id) {
                    None => issue(path, "adjacency references missing lane", vec![adj.neighbor_id]),
                    Some(&j) => {
                        if adj.neighbor_end_index >= s.lane_centers[j].polyline.len() {
                            issue(path, "neighbor index range outside neighbor polyline", vec![adj.neighbor_id]);
                        }
                    }
                }
            }
        }
    }

    for (i, edge) in s.road_edges.iter().enumerate() {
        if edge.polyline.len() < 2 {
            issue(format!("road_edges[{i}].polyline"), "road edge needs at least 2 points", vec![edge.id]);
        }
        if edge.polyline.iter().any(|p| !p.is_finite()) {
            issue(format!("road_edges[{i}].polyline"), "non-finite coordinate", vec![edge.id]);
        }
    }

    let dangling_stop: Vec<i64> = s.stop_sign_lane_ids.iter().copied().filter(|id| !lane_ids.contains_key(id)).collect();
    if !dangling_stop.is_empty() {
        issue("stop_sign_lane_ids".into(), "references missing lane", dangling_stop);
    }

    for (i, obs) in s.signal_observations.iter().enumerate() {
        let path = format!("signal_observations[{i}]");
        if obs.time_index >= s.history_length {
            issue(format!("{path}.time_index"), "observation outside history window", vec![]);
        }
        if !lane_ids.contains_key(&obs.lane_id) {
            issue(format!("{path}.lane_id"), "references missing lane", vec![obs.lane_id]);
        }
        if !obs.stop_point.is_finite() {
            issue(format!("{path}.stop_point"), "non-finite coordinate", vec![]);
        }
    }

    let mut track_ids = HashSet::new();
    for (i, track) in s.tracks.iter().enumerate() {
        let base = format!("tracks[{i}]");
        if !track_ids.insert(track.id) {
            issue(format!("{base}.id"), "duplicate track id", vec![track.id]);
        }
        if track.states.windows(2).any(|w| w[0].time_index >= w[1].time_index) {
            issue(format!("{base}.states"), "states must have strictly increasing time_index", vec![track.id]);
        }
        for (k, st) in track.states.iter().enumerate() {
            let finite = [st.x, st.y, st.heading, st.vx, st.vy, st.length, st.width].iter().all(|v| v.is_finite());
            if !finite {
                issue(format!("{base}.states[{k}]"), "non-finite value", vec![track.id]);
            } else if st.valid && (st.length <= 0.0 || st.width <= 0.0) {
                issue(format!("{base}.states[{k}]"), "valid state needs length and width > 0", vec![track.id]);
            }
        }
    }

    if issues.is_empty() {
        Ok(())
    } else {
        Err(ScenarioError::Validation(issues))
    }
}

/// Arc length of a lane center.
pub fn lane_length(lane: &LaneCenter) -> f64 {
    geom::arc_length(&lane.polyline).unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> Scenario {
        Scenario {
            id: "minimal".into(),
            timestep_s: 0.1,
            history_length: 11,
            lane_centers: vec![LaneCenter {
                id: 1,
                polyline: vec![Point2::new(0.0, 0.0), Point2::new(50.0, 0.0)],
                lane_type: LaneType::SurfaceStreet,
                speed_limit: 13.4,
                width: None,
                entry_ids: vec![],
                exit_ids: vec![],
                left_neighbors: vec![],
                right_neighbors: vec![],
            }],
            road_edges: vec![],
            stop_sign_lane_ids: vec![],
            signal_observations: vec![],
            tracks: vec![AgentTrack {
                id: 7,
                object_type: ObjectType::Vehicle,
                states: (0..11)
                    .map(|t| TrackState {
                        time_index: t,
                        x: t as f64,
                        y: 0.0,
                        heading: 0.0,
                        vx: 10.0,
                        vy: 0.0,
                        length: 4.5,
                        width: 1.9,
                        valid: true,
                    })
                    .collect(),
            }],
        }
    }

    #[test]
    fn minimal_file_loads() {
        let text = serde_json::to_string(&minimal()).unwrap();
        let s = parse_scenario(&text).unwrap();
        assert_eq!(s.lane_centers.len(), 1);
        assert_eq!(s.tracks.len(), 1);
    }

    #[test]
    fn dangling_adjacency_is_named() {
        let mut s = minimal();
        s.lane_centers[0].left_neighbors.push(Adjacency {
            neighbor_id: 99,
            self_start_index: 0,
            self_end_index: 1,
            neighbor_start_index: 0,
            neighbor_end_index: 1,
        });
        let err = parse_scenario(&serde_json::to_string(&s).unwrap()).unwrap_err();
        assert!(matches!(err, ScenarioError::Validation(_)));
        assert_eq!(err.ids(), vec![99]);
        assert!(err.to_string().contains("left_neighbors[0]"));
    }

    #[test]
    fn schema_error_carries_field_path() {
        let mut v = serde_json::to_value(minimal()).unwrap();
        v["lane_centers"][0]["speed_limit"] = serde_json::json!("fast");
        match parse_scenario(&v.to_string()).unwrap_err() {
            ScenarioError::Schema { path, .. } => assert_eq!(path, "lane_centers[0].speed_limit"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn nan_is_rejected_by_schema() {
        let text = serde_json::to_string(&minimal()).unwrap().replace("13.4", "NaN");
        assert!(matches!(parse_scenario(&text), Err(ScenarioError::Schema { .. })));
    }

    #[test]
    fn all_violations_reported_together() {
        let mut s = minimal();
        s.timestep_s = 0.2;
        s.lane_centers[0].exit_ids.push(5);
        s.tracks[0].states[3].length = 0.0;
        match validate(&s).unwrap_err() {
            ScenarioError::Validation(issues) => assert_eq!(issues.len(), 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn repeated_points_are_not_repaired() {
        let mut s = minimal();
        s.lane_centers[0].polyline.insert(1, Point2::new(0.0, 0.0));
        assert!(validate(&s).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let s = minimal();
        save_scenario(&s, &path).unwrap();
        assert_eq!(load_scenario(&path).unwrap(), s);
    }

    #[test]
    fn track_state_lookup_skips_invalid() {
        let mut s = minimal();
        s.tracks[0].states[4].valid = false;
        assert!(s.tracks[0].state_at(4).is_none());
        assert_eq!(s.tracks[0].state_at(5).unwrap().x, 5.0);
    }
}
