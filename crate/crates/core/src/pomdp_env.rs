//! Local observations, the delay/congestion reward, and the per-packet
//! episode protocol.
//!
//! An [`Observation`] is a destination-independent [`NodeFrame`] shared
//! through an `Arc` plus the packet's destination; destination features are
//! derived on demand from the frame's satellite positions. This keeps
//! observation windows in the replay memory cheap.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::constellation::{NodeId, SatellitePosition, TopologySnapshot, MAX_DEGREE};
use crate::error::{Error, Result};
use crate::transport::{Network, DEFAULT_MAX_QUEUE};

/// Per-neighbor topology feature width: unit direction (3), normalized distance, alive flag.
pub const TOPO_DIM: usize = 5;
/// Destination feature width: unit direction (3), normalized distance.
pub const DST_DIM: usize = 4;
/// Flattened observation length: 1 + 4 x (1 + 5) + 4 + 4 = 33.
pub const OBS_LEN: usize = 1 + MAX_DEGREE * (1 + TOPO_DIM) + DST_DIM + MAX_DEGREE;
pub const DEFAULT_WINDOW: usize = 8;

/// Geometry constants used to normalize topology features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationScales {
    pub altitude_km: f64,
    pub orbit_radius_km: f64,
}

/// The destination-independent part of one node's observation at one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFrame {
    pub slot: u64,
    pub node: NodeId,
    /// Neighbor ids, ascending; `None` for empty slots.
    pub neighbors: [Option<NodeId>; MAX_DEGREE],
    pub own_queue: f64,
    /// Estimated one-hop delay to each neighbor, seconds.
    pub neighbor_delays: [f64; MAX_DEGREE],
    pub topo: [[f64; TOPO_DIM]; MAX_DEGREE],
    pub mask: [bool; MAX_DEGREE],
    pub positions: Arc<[SatellitePosition]>,
    pub scales: ObservationScales,
}

impl NodeFrame {
    pub fn degree(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Local action index of `neighbor`, if it is one.
    pub fn action_of(&self, neighbor: NodeId) -> Option<usize> {
        self.neighbors.iter().position(|&n| n == Some(neighbor))
    }

    pub fn neighbor_at(&self, action: usize) -> Option<NodeId> {
        self.neighbors.get(action).copied().flatten()
    }

    /// Unit direction and normalized distance from this node to `dst`.
    pub fn dst_features(&self, dst: NodeId) -> [f64; DST_DIM] {
        let own = self.positions[self.node].coords;
        let target = self.positions[dst].coords;
        let delta = [target[0] - own[0], target[1] - own[1], target[2] - own[2]];
        let dist = (delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]).sqrt();
        if dist == 0.0 {
            return [0.0; DST_DIM];
        }
        [
            delta[0] / dist,
            delta[1] / dist,
            delta[2] / dist,
            dist / (2.0 * self.scales.orbit_radius_km),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub frame: Arc<NodeFrame>,
    pub dst: NodeId,
}

impl Observation {
    pub fn dst_features(&self) -> [f64; DST_DIM] {
        self.frame.dst_features(self.dst)
    }

    pub fn mask(&self) -> [bool; MAX_DEGREE] {
        self.frame.mask
    }

    /// `[own_queue, (delay_k, topo_k) x 4, dst features, mask bits]`, delays in seconds.
    pub fn flatten(&self) -> Vec<f64> {
        let f = &self.frame;
        let mut out = Vec::with_capacity(OBS_LEN);
        out.push(f.own_queue);
        for k in 0..MAX_DEGREE {
            out.push(f.neighbor_delays[k]);
            out.extend_from_slice(&f.topo[k]);
        }
        out.extend_from_slice(&self.dst_features());
        out.extend(f.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
        out
    }
}

/// Oldest first, front-padded with `None` to the window length.
pub type ObsWindow = Vec<Option<Observation>>;

/// Builds the current frame for `node` from live network state.
pub fn node_frame(
    slot: u64,
    node: NodeId,
    snapshot: &TopologySnapshot,
    network: &Network,
    positions: &Arc<[SatellitePosition]>,
    scales: ObservationScales,
) -> NodeFrame {
    let own = positions[node].coords;
    let mut frame = NodeFrame {
        slot,
        node,
        neighbors: [None; MAX_DEGREE],
        own_queue: (network.node(node).queue_len() as f64 / network.link_config().max_queue as f64).min(1.0),
        neighbor_delays: [0.0; MAX_DEGREE],
        topo: [[0.0; TOPO_DIM]; MAX_DEGREE],
        mask: [false; MAX_DEGREE],
        positions: Arc::clone(positions),
        scales,
    };
    let nbrs = snapshot.neighbors(node);
    let dists = snapshot.neighbor_distances(node);
    for (k, (&j, &d)) in nbrs.iter().zip(dists).take(MAX_DEGREE).enumerate() {
        let p = positions[j].coords;
        frame.neighbors[k] = Some(j);
        frame.mask[k] = true;
        frame.neighbor_delays[k] = network.estimate_delay(node, j, d).total;
        frame.topo[k] = [
            (p[0] - own[0]) / d,
            (p[1] - own[1]) / d,
            (p[2] - own[2]) / d,
            d / scales.altitude_km,
            1.0,
        ];
    }
    frame
}

/// The local observation of `node` for a packet bound to `dst`.
pub fn observe(
    slot: u64,
    node: NodeId,
    snapshot: &TopologySnapshot,
    network: &Network,
    positions: &Arc<[SatellitePosition]>,
    scales: ObservationScales,
    dst: NodeId,
) -> Observation {
    Observation {
        frame: Arc::new(node_frame(slot, node, snapshot, network, positions, scales)),
        dst,
    }
}

/// Per-node ring of recent frames, used to build observation windows.
#[derive(Debug, Clone)]
pub struct FrameHistory {
    window: usize,
    per_node: Vec<VecDeque<Arc<NodeFrame>>>,
}

impl FrameHistory {
    pub fn new(num_nodes: usize, window: usize) -> Self {
        Self {
            window: window.max(1),
            per_node: vec![VecDeque::new(); num_nodes],
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Records one slot of frames, one per node in id order.
    pub fn push(&mut self, frames: Vec<Arc<NodeFrame>>) {
        let keep = self.window - 1;
        for (ring, frame) in self.per_node.iter_mut().zip(frames) {
            if keep == 0 {
                continue;
            }
            if ring.len() == keep {
                ring.pop_front();
            }
            ring.push_back(frame);
        }
    }

    pub fn clear(&mut self) {
        self.per_node.iter_mut().for_each(VecDeque::clear);
    }

    /// Recorded frames for `node` followed by `current`, padded to the window length.
    pub fn window_for(&self, current: Arc<NodeFrame>, dst: NodeId) -> ObsWindow {
        let ring = &self.per_node[current.node];
        let mut out: ObsWindow = Vec::with_capacity(self.window);
        out.resize(self.window - 1 - ring.len(), None);
        out.extend(ring.iter().map(|f| {
            Some(Observation {
                frame: Arc::clone(f),
                dst,
            })
        }));
        out.push(Some(Observation { frame: current, dst }));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    /// Weight on normalized delay.
    pub alpha: f64,
    /// Weight on normalized queue length.
    pub beta: f64,
    pub delay_scale_s: f64,
    pub queue_scale: f64,
    /// Added to the last reward of a dropped packet.
    pub drop_penalty: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            beta: 0.6,
            delay_scale_s: 0.1,
            queue_scale: DEFAULT_MAX_QUEUE as f64,
            drop_penalty: -10.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::config("reward.alpha", "must be > 0"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::config("reward.beta", "must be > 0"));
        }
        if self.beta <= self.alpha {
            return Err(Error::config(
                "reward.beta",
                "must exceed alpha so congestion dominates",
            ));
        }
        if !(self.delay_scale_s > 0.0) || !(self.queue_scale > 0.0) {
            return Err(Error::config("reward.delay_scale_s", "scales must be > 0"));
        }
        if !(self.drop_penalty <= 0.0) {
            return Err(Error::config("reward.drop_penalty", "must be <= 0"));
        }
        Ok(())
    }
}

/// −(α·d_norm + β·q_norm) on already normalized inputs.
pub fn reward_normalized(weights: &RewardWeights, delay_norm: f64, queue_norm: f64) -> f64 {
    -(weights.alpha * delay_norm + weights.beta * queue_norm)
}

/// Reward for choosing a link with estimated delay `delay_s` at a node holding `queue` packets.
pub fn reward(weights: &RewardWeights, delay_s: f64, queue: f64) -> f64 {
    reward_normalized(weights, delay_s / weights.delay_scale_s, queue / weights.queue_scale)
}

pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

/// What happened to a packet after a routing decision.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    /// The packet reached another decision point.
    Forwarded(ObsWindow),
    Delivered,
    Dropped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub reward: f64,
    pub next: Option<ObsWindow>,
    pub done: bool,
}

/// Closes one decision of a packet's episode. `step_reward` is the reward
/// assigned when the action was taken.
pub fn episode_step(weights: &RewardWeights, step_reward: f64, outcome: Outcome) -> EpisodeStep {
    match outcome {
        Outcome::Forwarded(next) => EpisodeStep {
            reward: step_reward,
            next: Some(next),
            done: false,
        },
        Outcome::Delivered => EpisodeStep {
            reward: step_reward,
            next: None,
            done: true,
        },
        Outcome::Dropped => EpisodeStep {
            reward: step_reward + weights.drop_penalty,
            next: None,
            done: true,
        },
    }
}
