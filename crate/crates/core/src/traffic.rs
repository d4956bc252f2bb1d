//! Sinusoidally modulated Poisson packet generation.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::constellation::NodeId;
use crate::error::{Error, Result};
use crate::rng_stream;

pub const DEFAULT_TTL: u32 = 30;

/// An extra source-to-destination flow layered on top of the uniform traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HotspotFlow {
    pub src: NodeId,
    pub dst: NodeId,
    pub base_rate_lambda0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    /// Network-aggregate offered load. Ignored when `base_rate_lambda0` is set.
    pub offered_load_mbps: f64,
    /// Explicit per-node base rate, packets per slot.
    pub base_rate_lambda0: Option<f64>,
    pub period_slots: f64,
    pub packet_size_bytes: u32,
    /// Modulation depth; 1.0 gives the plain `1 + sin` profile, 0.0 a stationary process.
    pub amplitude: f64,
    /// Per-node phase shift, slots per node index.
    pub node_phase_offset_slots: f64,
    pub hotspots: Vec<HotspotFlow>,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            offered_load_mbps: 120.0,
            base_rate_lambda0: None,
            period_slots: 1000.0,
            packet_size_bytes: 1500,
            amplitude: 1.0,
            node_phase_offset_slots: 0.0,
            hotspots: Vec::new(),
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        if let Some(l) = self.base_rate_lambda0 {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(Error::config("traffic.base_rate_lambda0", "must be >= 0"));
            }
        } else if !(self.offered_load_mbps > 0.0) || !self.offered_load_mbps.is_finite() {
            return Err(Error::config("traffic.offered_load_mbps", "must be > 0"));
        }
        if !(self.period_slots > 0.0) {
            return Err(Error::config("traffic.period_slots", "must be > 0"));
        }
        if self.packet_size_bytes == 0 {
            return Err(Error::config("traffic.packet_size_bytes", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.amplitude) {
            return Err(Error::config("traffic.amplitude", "must lie in [0, 1]"));
        }
        if !self.node_phase_offset_slots.is_finite() {
            return Err(Error::config("traffic.node_phase_offset_slots", "must be finite"));
        }
        for (k, h) in self.hotspots.iter().enumerate() {
            if h.src >= num_nodes || h.dst >= num_nodes || h.src == h.dst {
                return Err(Error::config(
                    format!("traffic.hotspots[{k}]"),
                    "src and dst must be distinct existing nodes",
                ));
            }
            if !(h.base_rate_lambda0 >= 0.0) {
                return Err(Error::config(
                    format!("traffic.hotspots[{k}].base_rate_lambda0"),
                    "must be >= 0",
                ));
            }
        }
        Ok(())
    }

    pub fn packet_bits(&self) -> f64 {
        f64::from(self.packet_size_bytes) * 8.0
    }

    /// The per-node base rate, either given explicitly or derived from the offered load.
    pub fn resolve_lambda0(&self, num_nodes: usize, slot_duration_s: f64) -> Result<f64> {
        match self.base_rate_lambda0 {
            Some(l) => Ok(l),
            None => calibrate_lambda0(self.offered_load_mbps, self, num_nodes, slot_duration_s),
        }
    }
}

/// `λ0 (1 + a·sin(2π(t + node·φ)/T))` packets per slot.
pub fn arrival_rate_with(lambda0: f64, node: NodeId, t: u64, config: &TrafficConfig) -> f64 {
    // Reducing the phase first makes the rate exactly periodic in t.
    let phase = (t as f64 + node as f64 * config.node_phase_offset_slots).rem_euclid(config.period_slots);
    let rate = lambda0 * (1.0 + config.amplitude * (TAU * phase / config.period_slots).sin());
    rate.max(0.0)
}

/// Rate for `node` at slot `t` using an explicit `base_rate_lambda0` (0 when unset).
pub fn arrival_rate(node: NodeId, t: u64, config: &TrafficConfig) -> f64 {
    arrival_rate_with(config.base_rate_lambda0.unwrap_or(0.0), node, t, config)
}

pub fn sample_arrivals<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    let poisson = Poisson::new(rate).expect("positive finite rate");
    poisson.sample(rng) as u64
}

/// Maps a network-aggregate offered load to the per-node base rate.
///
/// The time average of the modulated rate over a period equals λ0, so
/// `λ0 · N · bits / slot_duration = offered_load`.
pub fn calibrate_lambda0(
    offered_load_mbps: f64,
    config: &TrafficConfig,
    num_nodes: usize,
    slot_duration_s: f64,
) -> Result<f64> {
    if !(offered_load_mbps > 0.0) {
        return Err(Error::config("traffic.offered_load_mbps", "must be > 0"));
    }
    if num_nodes == 0 {
        return Err(Error::config("constellation.num_satellites", "must be > 0"));
    }
    Ok(offered_load_mbps * 1e6 * slot_duration_s / (config.packet_bits() * num_nodes as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub size_bytes: u32,
    pub created_slot: u64,
    /// Remaining hops.
    pub ttl: u32,
    /// Visited nodes, starting with `src`.
    pub trace: Vec<NodeId>,
}

impl Packet {
    pub fn new(id: u64, src: NodeId, dst: NodeId, size_bytes: u32, created_slot: u64) -> Self {
        Self {
            id,
            src,
            dst,
            size_bytes,
            created_slot,
            ttl: DEFAULT_TTL,
            trace: vec![src],
        }
    }

    pub fn current_node(&self) -> NodeId {
        *self.trace.last().expect("trace starts with src")
    }

    pub fn hops(&self) -> usize {
        self.trace.len() - 1
    }
}

/// Hands out run-wide unique packet ids.
#[derive(Debug, Default, Clone)]
pub struct PacketIds {
    next: u64,
}

impl PacketIds {
    pub fn next_id(&mut self) -> u64 {
        let id = self.next;
        self.next += 1;
        id
    }

    pub fn issued(&self) -> u64 {
        self.next
    }
}

/// `count` packets from `node` with destinations uniform over the other nodes.
pub fn generate_packets<R: Rng + ?Sized>(
    rng: &mut R,
    node: NodeId,
    count: u64,
    t: u64,
    num_nodes: usize,
    size_bytes: u32,
    ids: &mut PacketIds,
) -> Vec<Packet> {
    if num_nodes < 2 {
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            let mut dst = rng.random_range(0..num_nodes - 1);
            if dst >= node {
                dst += 1;
            }
            Packet::new(ids.next_id(), node, dst, size_bytes, t)
        })
        .collect()
}

const NODE_STREAM_BASE: u64 = 1 << 20;
const HOTSPOT_STREAM_BASE: u64 = 1 << 21;

/// Per-node generators, each on its own seed-derived stream.
#[derive(Debug, Clone)]
pub struct TrafficGenerator {
    config: TrafficConfig,
    lambda0: f64,
    num_nodes: usize,
    node_rngs: Vec<ChaCha8Rng>,
    hotspot_rngs: Vec<ChaCha8Rng>,
}

impl TrafficGenerator {
    pub fn new(config: &TrafficConfig, num_nodes: usize, slot_duration_s: f64, seed: u64) -> Result<Self> {
        config.validate(num_nodes)?;
        let lambda0 = config.resolve_lambda0(num_nodes, slot_duration_s)?;
        Ok(Self {
            config: config.clone(),
            lambda0,
            num_nodes,
            node_rngs: (0..num_nodes)
                .map(|i| rng_stream(seed, NODE_STREAM_BASE + i as u64))
                .collect(),
            hotspot_rngs: (0..config.hotspots.len())
                .map(|k| rng_stream(seed, HOTSPOT_STREAM_BASE + k as u64))
                .collect(),
        })
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    pub fn rate(&self, node: NodeId, t: u64) -> f64 {
        arrival_rate_with(self.lambda0, node, t, &self.config)
    }

    /// Packets created at slot `t`, grouped by source node in ascending order.
    /// Returns the packets and per-node arrival counts.
    pub fn generate(&mut self, t: u64, ids: &mut PacketIds) -> (Vec<Packet>, Vec<u64>) {
        let mut packets = Vec::new();
        let mut counts = vec![0u64; self.num_nodes];
        let size = self.config.packet_size_bytes;
        for node in 0..self.num_nodes {
            let rate = self.rate(node, t);
            let rng = &mut self.node_rngs[node];
            let n = sample_arrivals(rng, rate);
            counts[node] += n;
            packets.extend(generate_packets(rng, node, n, t, self.num_nodes, size, ids));
            for (k, h) in self.config.hotspots.iter().enumerate() {
                if h.src != node {
                    continue;
                }
                let rate = arrival_rate_with(h.base_rate_lambda0, node, t, &self.config);
                let n = sample_arrivals(&mut self.hotspot_rngs[k], rate);
                counts[node] += n;
                packets.extend((0..n).map(|_| Packet::new(ids.next_id(), h.src, h.dst, size, t)));
            }
        }
        (packets, counts)
    }
}
