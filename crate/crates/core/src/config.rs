//! Run configuration. Every tolerance and behavioural threshold used by the
//! pipeline lives here so it can be overridden from a TOML or JSON file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Adjacency endpoint coincidence tolerance, meters.
    pub split_eps: f64,
    /// "Nearly identical point" tolerance for diverge/merge patterns, meters.
    pub node_eps: f64,
    /// Lateral coverage tolerance, meters.
    pub coverage_tolerance: f64,
    pub default_lane_width: f64,
    /// Split points closer than this to an existing vertex reuse it.
    pub vertex_snap: f64,
    pub max_split_rounds: usize,
    /// Successor lanes must continue within this heading change, degrees.
    pub successor_heading_tol_deg: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            split_eps: 0.5,
            node_eps: 1.0,
            coverage_tolerance: 2.0,
            default_lane_width: 3.5,
            vertex_snap: 0.1,
            max_split_rounds: 10_000,
            successor_heading_tol_deg: 90.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalConfig {
    /// Minimum crossing speed read as reacting to green, m/s.
    pub v_go: f64,
    /// A stopped lead vehicle this close to the stop point implies red, meters.
    pub d_stopline: f64,
    /// Speeds below this count as stopped, m/s.
    pub stopped_speed: f64,
    /// Accelerations above this count as "not decelerating", m/s^2.
    pub min_go_accel: f64,
    /// Lateral corridor around a lane when matching vehicles to it, meters.
    pub lateral_tolerance: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        SignalConfig { v_go: 3.0, d_stopline: 3.0, stopped_speed: 0.1, min_go_accel: -0.5, lateral_tolerance: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingConfig {
    pub w_main: f64,
    pub w_side: f64,
    /// Required edge length per needed lane change, meters.
    pub lane_change_distance: f64,
    pub max_depth: usize,
    /// Maximum lateral distance for on-network placement, meters.
    pub placement_tolerance: f64,
    pub max_heading_diff_deg: f64,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            w_main: 9.0,
            w_side: 1.0,
            lane_change_distance: 25.0,
            max_depth: 64,
            placement_tolerance: 5.0,
            max_heading_diff_deg: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverrideThresholds {
    pub d_intersection: f64,
    pub d_roadedge: f64,
    pub d_lanecenter_1: f64,
    pub d_lanecenter_2: f64,
    /// All valid history speeds below this count as "speed has been zero".
    pub zero_speed: f64,
}

impl Default for OverrideThresholds {
    fn default() -> Self {
        OverrideThresholds { d_intersection: 5.0, d_roadedge: 1.0, d_lanecenter_1: 2.0, d_lanecenter_2: 5.0, zero_speed: 0.1 }
    }
}

impl OverrideThresholds {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let all = [self.d_intersection, self.d_roadedge, self.d_lanecenter_1, self.d_lanecenter_2];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(ConfigError::Invalid("override thresholds must be > 0".into()));
        }
        if self.d_lanecenter_2 < self.d_lanecenter_1 {
            return Err(ConfigError::Invalid("d_lanecenter_2 must be >= d_lanecenter_1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Time gap a minor approach needs before entering, seconds.
    pub gap_acceptance_s: f64,
    /// Nominal lateral transition time of a lane change, seconds.
    pub lane_change_duration_s: f64,
    /// Largest angle between motion and lane direction while moving laterally, rad.
    pub max_lateral_angle: f64,
    pub lookahead_m: f64,
    pub overrides_enabled: bool,
    pub lane_changes_enabled: bool,
    /// Waiting time after which keep-clear is ignored; none disables the override.
    pub jm_ignore_keep_clear_time: Option<f64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            gap_acceptance_s: 4.0,
            lane_change_duration_s: 2.0,
            max_lateral_angle: 0.3,
            lookahead_m: 150.0,
            overrides_enabled: true,
            lane_changes_enabled: true,
            jm_ignore_keep_clear_time: None,
        }
    }
}

/// Fixed histogram bin edges: `bins` equal-width bins over `[lo, hi]`, with
/// values outside clamped into the end bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinSpec {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl BinSpec {
    pub const fn new(lo: f64, hi: f64, bins: usize) -> Self {
        BinSpec { lo, hi, bins }
    }

    pub fn index(&self, v: f64) -> usize {
        if !v.is_finite() {
            return if v > 0.0 { self.bins - 1 } else { 0 };
        }
        let t = (v - self.lo) / (self.hi - self.lo);
        ((t * self.bins as f64).floor().max(0.0) as usize).min(self.bins - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub kinematic_weight: f64,
    pub interactive_weight: f64,
    pub map_weight: f64,
    pub linear_speed: BinSpec,
    pub linear_accel: BinSpec,
    pub angular_speed: BinSpec,
    pub angular_accel: BinSpec,
    pub distance_to_nearest: BinSpec,
    pub ttc: BinSpec,
    pub distance_to_road_edge: BinSpec,
    /// Mixture weight of the uniform distribution blended into simulated histograms.
    pub smoothing: f64,
    /// Disc diameter used for pedestrians, meters.
    pub pedestrian_diameter: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            kinematic_weight: 1.0,
            interactive_weight: 1.0,
            map_weight: 1.0,
            linear_speed: BinSpec::new(0.0, 30.0, 30),
            linear_accel: BinSpec::new(-10.0, 10.0, 20),
            angular_speed: BinSpec::new(-1.5, 1.5, 30),
            angular_accel: BinSpec::new(-5.0, 5.0, 20),
            distance_to_nearest: BinSpec::new(0.0, 40.0, 20),
            ttc: BinSpec::new(0.0, 5.0, 10),
            distance_to_road_edge: BinSpec::new(-5.0, 15.0, 20),
            smoothing: 0.005,
            pedestrian_diameter: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub horizon_steps: usize,
    pub n_rollouts: usize,
    pub workers: usize,
    pub net: NetConfig,
    pub signal: SignalConfig,
    pub routing: RoutingConfig,
    pub overrides: OverrideThresholds,
    pub engine: EngineConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            horizon_steps: 80,
            n_rollouts: 32,
            workers: 1,
            net: NetConfig::default(),
            signal: SignalConfig::default(),
            routing: RoutingConfig::default(),
            overrides: OverrideThresholds::default(),
            engine: EngineConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl RunConfig {
    /// Loads a `.toml` or `.json` config file; missing keys take defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: shown.clone(), source })?;
        let parsed: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse { path: shown.clone(), message: e.to_string() })?
        } else {
            toml::from_str(&text).map_err(|e| ConfigError::Parse { path: shown.clone(), message: e.to_string() })?
        };
        parsed.validate()?;
        Ok(parsed)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_rollouts < 1 {
            return Err(ConfigError::Invalid("n_rollouts must be >= 1".into()));
        }
        if self.horizon_steps < 1 {
            return Err(ConfigError::Invalid("horizon_steps must be >= 1".into()));
        }
        self.overrides.validate()
    }

    /// Checks the horizon against a scenario's history window.
    pub fn validate_for(&self, history_length: usize) -> Result<(), ConfigError> {
        self.validate()?;
        if self.horizon_steps <= history_length {
            return Err(ConfigError::Invalid(format!(
                "horizon_steps ({}) must exceed history_length ({history_length})",
                self.horizon_steps
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_takes_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 7\n[overrides]\nd_intersection = 6.0\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.n_rollouts, 32);
        assert_eq!(cfg.overrides.d_intersection, 6.0);
        assert_eq!(cfg.overrides.d_lanecenter_2, 5.0);
    }

    #[test]
    fn thresholds_must_be_ordered() {
        let mut cfg = RunConfig::default();
        cfg.overrides.d_lanecenter_2 = 1.0;
        assert!(cfg.validate().is_err());
        assert!(RunConfig::default().validate_for(11).is_ok());
        let mut short = RunConfig::default();
        short.horizon_steps = 10;
        assert!(short.validate_for(11).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 1").is_err());
    }

    #[test]
    fn bin_index_clamps() {
        let b = BinSpec::new(0.0, 10.0, 10);
        assert_eq!(b.index(-3.0), 0);
        assert_eq!(b.index(4.5), 4);
        assert_eq!(b.index(10.0), 9);
        assert_eq!(b.index(f64::INFINITY), 9);
    }
}
