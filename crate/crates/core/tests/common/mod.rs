#![allow(dead_code)]

pub mod gradcheck;
pub mod paths;

use leo_routing::agent::{OptimizerKind, PolicyKind};
use leo_routing::constellation::ConstellationConfig;
use leo_routing::harness::ExperimentConfig;
use leo_routing::traffic::HotspotFlow;

/// Static P×S +grid with stationary uniform traffic at `lambda0` packets/slot/node.
pub fn grid_config(planes: usize, per_plane: usize, lambda0: f64, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.constellation = ConstellationConfig {
        polar_cutoff_deg: 90.0,
        static_topology: true,
        ..ConstellationConfig::grid(planes, per_plane)
    };
    c.traffic.base_rate_lambda0 = Some(lambda0);
    c.traffic.amplitude = 0.0;
    c.run.seed = Some(seed);
    c.run.episodes = 0;
    c.run.slots_per_episode = 200;
    c
}

/// Small network and a short training budget sized for a single laptop core.
pub fn desk_agent(c: &mut ExperimentConfig, episodes: usize) {
    c.run.policy = PolicyKind::Proposed;
    c.run.episodes = episodes;
    c.run.slots_per_episode = 500;
    c.agent.optimizer = OptimizerKind::Adam;
    c.agent.learning_rate = 3e-4;
    c.agent.batch_size = 32;
    c.agent.window = 4;
    c.agent.updates_per_slot = 4;
    c.agent.arch.gat_hidden = 32;
    c.agent.arch.lstm_hidden = 32;
    c.agent.arch.head_hidden = 32;
}

/// 3×3 grid with a reduced link rate and one NHPP flow whose peaks overload a single link.
pub fn corridor_config(seed: u64) -> ExperimentConfig {
    let mut c = grid_config(3, 3, 0.2, seed);
    c.link.capacity_bps = 6e6;
    c.traffic.amplitude = 1.0;
    c.traffic.hotspots = vec![HotspotFlow {
        src: 0,
        dst: 1,
        base_rate_lambda0: 4.5,
    }];
    c
}
