//! Scenario-to-network conversion, closed-loop stochastic traffic rollouts and
//! realism scoring for vectorized driving scenes.

pub mod config;
pub mod demand;
pub mod engine;
pub mod export;
pub mod fixtures;
pub mod geom;
pub mod metrics;
pub mod net;
pub mod overrides;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod signal;

pub use config::RunConfig;
pub use geom::{Point2, Polyline};
pub use net::{build_network, ConnId, Connection, Edge, EdgeId, Movement, NetLane, Network, Node, NodeId, NodeKind};
pub use scenario::{load_scenario, AgentTrack, LaneCenter, Scenario};
pub use signal::{LightState, SignalProgram};
