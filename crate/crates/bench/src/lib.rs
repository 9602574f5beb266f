//! Shared fixtures for the benchmark targets.

use ftpads_core::engine::{Simulation, SimulationConfig};
use ftpads_core::faults::FailureSchedule;
use ftpads_core::p2p::{P2pModel, P2pParams};
use ftpads_core::{FailureModel, RunReport};

/// Run the P2P workload once with the given shape.
pub fn run_p2p(l: u32, n: u32, model: FailureModel, steps: u64, workers: usize) -> RunReport {
    let mut config = SimulationConfig::new(l, n, model, steps, 0xBE7C);
    config.workers = workers;
    let behavior = P2pModel::new(n, P2pParams::default(), config.master_seed).expect("overlay");
    Simulation::new(config, behavior, FailureSchedule::empty())
        .expect("valid bench config")
        .run_quiet()
}
