//! Closed-loop rollouts: Krauss car-following, route-driven lane changes and
//! junction control at a fixed 10 Hz step.

pub mod io;
pub mod junction;
pub mod krauss;
mod world;

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::demand::{build_demand, Demand};
use crate::net::{Network, NodeId};
use crate::overrides::{classify_all, OverrideContext};
use crate::scenario::Scenario;
use crate::signal::SignalProgram;

pub use krauss::{desired_speed, safe_speed};
pub use world::{AgentRollout, Rollout, Seg, SimState, World, STOPPED};

/// Demand for one seed with override classes assigned.
pub fn prepare_demand(scenario: &Scenario, network: &Network, programs: &BTreeMap<NodeId, SignalProgram>, cfg: &RunConfig, seed: u64) -> Demand {
    let mut demand = build_demand(scenario, network, seed, &cfg.routing, &cfg.engine);
    if cfg.engine.overrides_enabled {
        let ctx = OverrideContext::new(scenario, network, programs, &cfg.overrides);
        classify_all(&mut demand.specs, scenario, &ctx);
    }
    demand
}

/// One rollout of `cfg.horizon_steps` steps with the given seed.
pub fn simulate(scenario: &Scenario, network: &Network, programs: &BTreeMap<NodeId, SignalProgram>, cfg: &RunConfig, seed: u64) -> Rollout {
    let demand = prepare_demand(scenario, network, programs, cfg, seed);
    simulate_demand(scenario, network, programs, cfg, &demand, seed)
}

pub fn simulate_demand(
    scenario: &Scenario,
    network: &Network,
    programs: &BTreeMap<NodeId, SignalProgram>,
    cfg: &RunConfig,
    demand: &Demand,
    seed: u64,
) -> Rollout {
    World::new(scenario, network, programs, &demand.specs, &cfg.engine, &cfg.routing, seed).run(cfg.horizon_steps)
}

/// `cfg.n_rollouts` rollouts with seeds `cfg.seed + k`, run on a pool of
/// `cfg.workers` threads. Output does not depend on the worker count.
pub fn rollouts(scenario: &Scenario, network: &Network, programs: &BTreeMap<NodeId, SignalProgram>, cfg: &RunConfig) -> Vec<Rollout> {
    let run = || rollouts_in_pool(scenario, network, programs, cfg);
    match rayon::ThreadPoolBuilder::new().num_threads(cfg.workers.max(1)).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

/// As [`rollouts`], on whichever rayon pool the caller is running in.
pub fn rollouts_in_pool(scenario: &Scenario, network: &Network, programs: &BTreeMap<NodeId, SignalProgram>, cfg: &RunConfig) -> Vec<Rollout> {
    (0..cfg.n_rollouts as u64)
        .into_par_iter()
        .map(|k| simulate(scenario, network, programs, cfg, cfg.seed.wrapping_add(k)))
        .collect()
}
