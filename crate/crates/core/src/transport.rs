//! Per-slot packet engine.
//!
//! Each slot runs two phases. [`Network::forward`] serves every node's FIFO
//! queue: each outgoing link carries at most its per-link share of packets,
//! and a transmitted packet enters a propagation pipeline for
//! `max(1, ceil(prop / slot))` slots. [`Network::admit`] then lands pipeline
//! arrivals and fresh packets: packets at their destination are delivered,
//! the rest get a next hop from the router and join the queue, or are dropped
//! when the queue is full. Together the phases realize
//! `Q(t+1) = max(Q(t) - μ, 0) + A` with overflow counted at admission.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::constellation::{NodeId, SatellitePosition, TopologySnapshot};
use crate::error::{Error, Result};
use crate::traffic::Packet;

/// Speed of light in vacuum, km/s.
pub const SPEED_OF_LIGHT_KM_S: f64 = 299_792.458;
pub const DEFAULT_MAX_QUEUE: usize = 640;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub capacity_bps: f64,
    pub processing_delay_s: f64,
    pub max_queue: usize,
    pub ttl_hops: u32,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            capacity_bps: 300e6,
            processing_delay_s: 1e-3,
            max_queue: DEFAULT_MAX_QUEUE,
            ttl_hops: crate::traffic::DEFAULT_TTL,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.capacity_bps > 0.0) || !self.capacity_bps.is_finite() {
            return Err(Error::config("link.capacity_bps", "must be > 0"));
        }
        if !(self.processing_delay_s >= 0.0) {
            return Err(Error::config("link.processing_delay_s", "must be >= 0"));
        }
        if self.max_queue == 0 {
            return Err(Error::config("link.max_queue", "must be > 0"));
        }
        if self.ttl_hops == 0 {
            return Err(Error::config("link.ttl_hops", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub capacity_bps: f64,
    pub distance_km: f64,
    pub processing_delay_s: f64,
    pub packet_bits: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayBreakdown {
    pub prop: f64,
    pub trans: f64,
    pub queue: f64,
    pub proc: f64,
    pub total: f64,
}

/// Per-hop delay estimate; the queueing term is `queued_ahead` transmission times.
pub fn link_delay(link: &LinkParams, queued_ahead: usize) -> DelayBreakdown {
    let prop = link.distance_km / SPEED_OF_LIGHT_KM_S;
    let trans = link.packet_bits / link.capacity_bps;
    let queue = queued_ahead as f64 * trans;
    let proc = link.processing_delay_s;
    DelayBreakdown {
        prop,
        trans,
        queue,
        proc,
        total: prop + trans + queue + proc,
    }
}

/// Packets one link can carry in one slot.
pub fn per_link_share(capacity_bps: f64, slot_duration_s: f64, packet_bits: f64) -> u64 {
    // The small slack absorbs binary rounding in products like 3e8 * 0.01.
    (capacity_bps * slot_duration_s / packet_bits + 1e-9).floor() as u64
}

/// μᵢ(t): total packets node `node` can send this slot.
pub fn service_capacity(
    node: NodeId,
    snapshot: &TopologySnapshot,
    slot_duration_s: f64,
    capacity_bps: f64,
    packet_bits: f64,
) -> u64 {
    snapshot.degree(node) as u64 * per_link_share(capacity_bps, slot_duration_s, packet_bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueStep {
    pub next: u64,
    pub overflow: u64,
}

/// `max(Q - μ, 0) + A`, clamped to `max_queue` with the excess reported as overflow.
pub fn step_queue(q: u64, mu: u64, arrivals: u64, max_queue: u64) -> QueueStep {
    let unclamped = q.saturating_sub(mu) + arrivals;
    QueueStep {
        next: unclamped.min(max_queue),
        overflow: unclamped.saturating_sub(max_queue),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NodeCounters {
    pub delivered: u64,
    pub dropped_overflow: u64,
    pub dropped_ttl: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueuedPacket {
    pub packet: Packet,
    /// Chosen next hop; `None` while the packet has no route.
    pub egress: Option<NodeId>,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub queue: VecDeque<QueuedPacket>,
    pub counters: NodeCounters,
    /// Queued packets per chosen egress, indexed by neighbor id.
    backlog: Vec<u32>,
}

impl NodeState {
    fn new(id: NodeId, num_nodes: usize) -> Self {
        Self {
            id,
            queue: VecDeque::new(),
            counters: NodeCounters::default(),
            backlog: vec![0; num_nodes],
        }
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    /// Packets already queued for `egress`.
    pub fn backlog_for(&self, egress: NodeId) -> usize {
        self.backlog[egress] as usize
    }

    fn push(&mut self, packet: Packet, egress: Option<NodeId>) {
        if let Some(e) = egress {
            self.backlog[e] += 1;
        }
        self.queue.push_back(QueuedPacket { packet, egress });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    Overflow,
    Ttl,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PacketEvent {
    Delivered {
        packet: Packet,
        slot: u64,
        delay_s: f64,
    },
    Dropped {
        packet: Packet,
        slot: u64,
        node: NodeId,
        reason: DropReason,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Totals {
    pub generated: u64,
    pub delivered: u64,
    pub dropped_overflow: u64,
    pub dropped_ttl: u64,
    pub contract_violations: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct InFlight {
    to: NodeId,
    packet: Packet,
}

/// Read-only state handed to a router when it picks a next hop.
pub struct DecisionView<'a> {
    pub slot: u64,
    pub node: NodeId,
    pub snapshot: &'a TopologySnapshot,
    pub positions: &'a [SatellitePosition],
    pub network: &'a Network,
}

impl DecisionView<'_> {
    pub fn node_state(&self) -> &NodeState {
        &self.network.nodes[self.node]
    }
}

/// Next-hop selection. Returning `None` holds the packet in the queue.
pub trait Router {
    fn next_hop(&mut self, view: &DecisionView<'_>, packet: &Packet) -> Option<NodeId>;
}

impl<F> Router for F
where
    F: FnMut(&DecisionView<'_>, &Packet) -> Option<NodeId>,
{
    fn next_hop(&mut self, view: &DecisionView<'_>, packet: &Packet) -> Option<NodeId> {
        self(view, packet)
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    link: LinkConfig,
    slot_duration_s: f64,
    packet_bits: f64,
    /// Routing-contract violations are errors instead of counted drops.
    strict: bool,
    nodes: Vec<NodeState>,
    pipeline: BTreeMap<u64, Vec<InFlight>>,
    totals: Totals,
}

impl Network {
    pub fn new(num_nodes: usize, link: &LinkConfig, slot_duration_s: f64, packet_bits: f64) -> Self {
        Self {
            link: link.clone(),
            slot_duration_s,
            packet_bits,
            strict: true,
            nodes: (0..num_nodes).map(|i| NodeState::new(i, num_nodes)).collect(),
            pipeline: BTreeMap::new(),
            totals: Totals::default(),
        }
    }

    /// In lenient mode an invalid next hop is counted and the packet dropped
    /// into the hop-exhaustion bucket.
    pub fn set_strict(&mut self, strict: bool) {
        self.strict = strict;
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &NodeState {
        &self.nodes[id]
    }

    pub fn totals(&self) -> Totals {
        self.totals
    }

    pub fn link_config(&self) -> &LinkConfig {
        &self.link
    }

    pub fn slot_duration_s(&self) -> f64 {
        self.slot_duration_s
    }

    pub fn packet_bits(&self) -> f64 {
        self.packet_bits
    }

    pub fn share(&self) -> u64 {
        per_link_share(self.link.capacity_bps, self.slot_duration_s, self.packet_bits)
    }

    pub fn link_params(&self, distance_km: f64) -> LinkParams {
        LinkParams {
            capacity_bps: self.link.capacity_bps,
            distance_km,
            processing_delay_s: self.link.processing_delay_s,
            packet_bits: self.packet_bits,
        }
    }

    /// D_ij estimate for the link `node -> neighbor`, using the packets
    /// already queued for that egress.
    pub fn estimate_delay(&self, node: NodeId, neighbor: NodeId, distance_km: f64) -> DelayBreakdown {
        link_delay(&self.link_params(distance_km), self.nodes[node].backlog_for(neighbor))
    }

    pub fn queued(&self) -> u64 {
        self.nodes.iter().map(|n| n.queue.len() as u64).sum()
    }

    pub fn in_pipeline(&self) -> u64 {
        self.pipeline.values().map(|v| v.len() as u64).sum()
    }

    /// Packets still inside the network (queued or propagating).
    pub fn in_flight(&self) -> u64 {
        self.queued() + self.in_pipeline()
    }

    /// generated = delivered + dropped_overflow + dropped_ttl + in_flight.
    pub fn conservation_holds(&self) -> bool {
        let t = self.totals;
        t.generated == t.delivered + t.dropped_overflow + t.dropped_ttl + self.in_flight()
    }

    fn propagation_slots(&self, distance_km: f64) -> u64 {
        let prop = distance_km / SPEED_OF_LIGHT_KM_S;
        ((prop / self.slot_duration_s).ceil() as u64).max(1)
    }

    fn hop_overhead_s(&self) -> f64 {
        self.packet_bits / self.link.capacity_bps + self.link.processing_delay_s
    }

    fn check_hop(
        &mut self,
        slot: u64,
        node: NodeId,
        hop: Option<NodeId>,
        snapshot: &TopologySnapshot,
    ) -> Result<HopCheck> {
        match hop {
            None => Ok(HopCheck::Hold),
            Some(h) if h < snapshot.num_nodes() && snapshot.is_neighbor(node, h) => Ok(HopCheck::Valid(h)),
            Some(h) => {
                if self.strict {
                    return Err(Error::RoutingContract {
                        slot,
                        node,
                        next_hop: h,
                    });
                }
                self.totals.contract_violations += 1;
                Ok(HopCheck::Invalid)
            }
        }
    }

    fn drop_packet(
        &mut self,
        packet: Packet,
        slot: u64,
        node: NodeId,
        reason: DropReason,
        events: &mut Vec<PacketEvent>,
    ) {
        match reason {
            DropReason::Overflow => {
                self.totals.dropped_overflow += 1;
                self.nodes[node].counters.dropped_overflow += 1;
            }
            DropReason::Ttl => {
                self.totals.dropped_ttl += 1;
                self.nodes[node].counters.dropped_ttl += 1;
            }
        }
        events.push(PacketEvent::Dropped {
            packet,
            slot,
            node,
            reason,
        });
    }

    /// Service phase: every node transmits up to its per-link share on each
    /// outgoing link, FIFO among packets bound for the same egress. Packets
    /// whose egress is unset or no longer a neighbor are re-routed first.
    pub fn forward<R: Router + ?Sized>(
        &mut self,
        slot: u64,
        snapshot: &TopologySnapshot,
        positions: &[SatellitePosition],
        router: &mut R,
    ) -> Result<Vec<PacketEvent>> {
        let mut events = Vec::new();
        let share = self.share();
        for node in 0..self.nodes.len() {
            if self.nodes[node].queue.is_empty() {
                continue;
            }
            // Re-route packets with a stale or missing egress.
            for k in 0..self.nodes[node].queue.len() {
                let egress = self.nodes[node].queue[k].egress;
                if matches!(egress, Some(e) if snapshot.is_neighbor(node, e)) {
                    continue;
                }
                if let Some(e) = egress {
                    self.nodes[node].backlog[e] -= 1;
                    self.nodes[node].queue[k].egress = None;
                }
                if snapshot.degree(node) == 0 {
                    continue;
                }
                let hop = {
                    let view = DecisionView {
                        slot,
                        node,
                        snapshot,
                        positions,
                        network: self,
                    };
                    router.next_hop(&view, &self.nodes[node].queue[k].packet)
                };
                match self.check_hop(slot, node, hop, snapshot)? {
                    HopCheck::Valid(h) => {
                        self.nodes[node].queue[k].egress = Some(h);
                        self.nodes[node].backlog[h] += 1;
                    }
                    HopCheck::Hold => {}
                    HopCheck::Invalid => {
                        // Marked for removal below.
                        self.nodes[node].queue[k].egress = Some(usize::MAX);
                    }
                }
            }

            let neighbors = snapshot.neighbors(node);
            let mut remaining: Vec<u64> = vec![share; neighbors.len()];
            let mut budget: u64 = share * neighbors.len() as u64;
            let queue = std::mem::take(&mut self.nodes[node].queue);
            let mut kept = VecDeque::with_capacity(queue.len());
            let mut sent = Vec::new();
            let mut invalid = Vec::new();
            for qp in queue {
                match qp.egress {
                    Some(usize::MAX) => invalid.push(qp.packet),
                    Some(e) if budget > 0 => {
                        let idx = neighbors.binary_search(&e).expect("egress validated above");
                        if remaining[idx] > 0 {
                            remaining[idx] -= 1;
                            budget -= 1;
                            sent.push((qp.packet, e, snapshot.neighbor_distances(node)[idx]));
                        } else {
                            kept.push_back(qp);
                        }
                    }
                    _ => kept.push_back(qp),
                }
            }
            self.nodes[node].queue = kept;
            for packet in invalid {
                self.drop_packet(packet, slot, node, DropReason::Ttl, &mut events);
            }
            for (mut packet, to, distance) in sent {
                self.nodes[node].backlog[to] -= 1;
                packet.ttl -= 1;
                packet.trace.push(to);
                if to != packet.dst && packet.ttl == 0 {
                    self.drop_packet(packet, slot, node, DropReason::Ttl, &mut events);
                    continue;
                }
                let arrive = slot + self.propagation_slots(distance);
                self.pipeline.entry(arrive).or_default().push(InFlight { to, packet });
            }
        }
        Ok(events)
    }

    /// Admission phase: lands pipeline arrivals due at `slot`, then the
    /// freshly generated `new_packets`, in that order.
    pub fn admit<R: Router + ?Sized>(
        &mut self,
        slot: u64,
        new_packets: Vec<Packet>,
        snapshot: &TopologySnapshot,
        positions: &[SatellitePosition],
        router: &mut R,
    ) -> Result<Vec<PacketEvent>> {
        let mut events = Vec::new();
        self.totals.generated += new_packets.len() as u64;
        let landed = self.pipeline.remove(&slot).unwrap_or_default();
        let arrivals = landed
            .into_iter()
            .map(|f| (f.to, f.packet))
            .chain(new_packets.into_iter().map(|p| (p.src, p)));
        for (node, packet) in arrivals {
            if node == packet.dst {
                let delay_s = (slot - packet.created_slot) as f64 * self.slot_duration_s
                    + packet.hops() as f64 * self.hop_overhead_s();
                self.totals.delivered += 1;
                self.nodes[node].counters.delivered += 1;
                events.push(PacketEvent::Delivered { packet, slot, delay_s });
                continue;
            }
            if self.nodes[node].queue.len() >= self.link.max_queue {
                self.drop_packet(packet, slot, node, DropReason::Overflow, &mut events);
                continue;
            }
            let hop = if snapshot.degree(node) == 0 {
                None
            } else {
                let view = DecisionView {
                    slot,
                    node,
                    snapshot,
                    positions,
                    network: self,
                };
                router.next_hop(&view, &packet)
            };
            match self.check_hop(slot, node, hop, snapshot)? {
                HopCheck::Valid(h) => self.nodes[node].push(packet, Some(h)),
                HopCheck::Hold => self.nodes[node].push(packet, None),
                HopCheck::Invalid => self.drop_packet(packet, slot, node, DropReason::Ttl, &mut events),
            }
        }
        Ok(events)
    }

    /// Empties queues and the pipeline and zeroes all counters.
    pub fn reset(&mut self) {
        let n = self.nodes.len();
        self.nodes = (0..n).map(|i| NodeState::new(i, n)).collect();
        self.pipeline.clear();
        self.totals = Totals::default();
    }
}

enum HopCheck {
    Valid(NodeId),
    Hold,
    Invalid,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(n: usize, km: f64) -> TopologySnapshot {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1, km)).collect();
        TopologySnapshot::from_edges(0, n, &edges).unwrap()
    }

    fn positions(n: usize) -> Vec<SatellitePosition> {
        (0..n)
            .map(|i| SatellitePosition {
                sat_id: i,
                coords: [i as f64, 0.0, 0.0],
            })
            .collect()
    }

    fn toward_dst(view: &DecisionView<'_>, p: &Packet) -> Option<NodeId> {
        let n = view.snapshot.neighbors(view.node);
        if p.dst > view.node {
            n.iter().copied().find(|&j| j > view.node)
        } else {
            n.iter().copied().find(|&j| j < view.node)
        }
    }

    #[test]
    fn service_capacity_arithmetic() {
        let snap = TopologySnapshot::from_edges(0, 5, &[(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0), (0, 4, 1.0)]).unwrap();
        assert_eq!(service_capacity(0, &snap, 0.01, 300e6, 12_000.0), 1000);
        assert_eq!(service_capacity(1, &snap, 0.01, 300e6, 12_000.0), 250);
        assert_eq!(service_capacity(0, &snap, 0.02, 300e6, 12_000.0), 2000);
        let isolated = TopologySnapshot::from_edges(0, 2, &[]).unwrap();
        assert_eq!(service_capacity(0, &isolated, 0.01, 300e6, 12_000.0), 0);
    }

    #[test]
    fn step_queue_examples() {
        assert_eq!(step_queue(5, 3, 2, 640), QueueStep { next: 4, overflow: 0 });
        assert_eq!(step_queue(2, 5, 1, 640), QueueStep { next: 1, overflow: 0 });
        assert_eq!(
            step_queue(640, 0, 10, 640),
            QueueStep {
                next: 640,
                overflow: 10
            }
        );
    }

    #[test]
    fn link_delay_components() {
        let base = LinkParams {
            capacity_bps: 300e6,
            distance_km: 1000.0,
            processing_delay_s: 1e-3,
            packet_bits: 12_000.0,
        };
        let d = link_delay(&base, 0);
        assert!((d.prop - 1000.0 / 299_792.458).abs() < 1e-15);
        assert!((d.prop - 3.3357e-3).abs() < 1e-7);
        assert!((d.trans - 4e-5).abs() < 1e-18);
        let zero = link_delay(
            &LinkParams {
                distance_km: 0.0,
                ..base
            },
            0,
        );
        assert_eq!(zero.total, zero.trans + zero.proc);
        let q = link_delay(&base, 7);
        assert!((q.queue - 7.0 * 4e-5).abs() < 1e-15);
        assert_eq!(q.total, q.prop + q.trans + q.queue + q.proc);
    }

    #[test]
    fn delivery_at_neighbor() {
        let snap = line(3, 3000.0);
        let pos = positions(3);
        let mut net = Network::new(3, &LinkConfig::default(), 0.01, 12_000.0);
        let mut router = toward_dst;
        let p = Packet::new(0, 1, 2, 1500, 0);
        assert!(net.admit(0, vec![p], &snap, &pos, &mut router).unwrap().is_empty());
        assert_eq!(net.node(1).backlog_for(2), 1);
        assert!(net.forward(1, &snap, &pos, &mut router).unwrap().is_empty());
        // 3000 km is ~10.007 ms, two 10 ms slots of propagation.
        assert!(net.admit(2, vec![], &snap, &pos, &mut router).unwrap().is_empty());
        let ev = net.admit(3, vec![], &snap, &pos, &mut router).unwrap();
        match &ev[..] {
            [PacketEvent::Delivered { packet, slot, delay_s }] => {
                assert_eq!(packet.trace, vec![1, 2]);
                assert_eq!(*slot, 3);
                assert!((delay_s - (0.03 + 4e-5 + 1e-3)).abs() < 1e-12);
                assert!(*delay_s >= 3000.0 / SPEED_OF_LIGHT_KM_S);
            }
            other => panic!("{other:?}"),
        }
        assert!(net.conservation_holds());
        assert_eq!(net.node(2).counters.delivered, 1);
    }

    #[test]
    fn ttl_one_to_non_destination_is_dropped() {
        let snap = line(3, 100.0);
        let pos = positions(3);
        let mut net = Network::new(3, &LinkConfig::default(), 0.01, 12_000.0);
        let mut router = toward_dst;
        let mut p = Packet::new(0, 0, 2, 1500, 0);
        p.ttl = 1;
        net.admit(0, vec![p], &snap, &pos, &mut router).unwrap();
        let ev = net.forward(1, &snap, &pos, &mut router).unwrap();
        assert!(matches!(
            &ev[..],
            [PacketEvent::Dropped {
                reason: DropReason::Ttl,
                node: 0,
                ..
            }]
        ));
        assert_eq!(net.totals().dropped_ttl, 1);
        assert!(net.conservation_holds());
    }

    #[test]
    fn overflow_drops_at_admission() {
        let snap = line(2, 100.0);
        let pos = positions(2);
        let link = LinkConfig {
            max_queue: 3,
            ..LinkConfig::default()
        };
        let mut net = Network::new(2, &link, 0.01, 12_000.0);
        let mut router = toward_dst;
        let pkts: Vec<_> = (0..5).map(|i| Packet::new(i, 0, 1, 1500, 0)).collect();
        let ev = net.admit(0, pkts, &snap, &pos, &mut router).unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(net.node(0).queue_len(), 3);
        assert_eq!(net.totals().dropped_overflow, 2);
        assert!(net.conservation_holds());
    }

    #[test]
    fn per_link_share_limits_service() {
        let snap = line(3, 100.0);
        let pos = positions(3);
        // 1.2 Mbps over 10 ms slots carries exactly one 1500 B packet per slot.
        let link = LinkConfig {
            capacity_bps: 1.2e6,
            ..LinkConfig::default()
        };
        let mut net = Network::new(3, &link, 0.01, 12_000.0);
        let mut router = toward_dst;
        let pkts = vec![
            Packet::new(0, 1, 2, 1500, 0),
            Packet::new(1, 1, 2, 1500, 0),
            Packet::new(2, 1, 0, 1500, 0),
        ];
        net.admit(0, pkts, &snap, &pos, &mut router).unwrap();
        net.forward(1, &snap, &pos, &mut router).unwrap();
        // One packet per egress left; the second packet for node 2 waits.
        assert_eq!(net.node(1).queue_len(), 1);
        assert_eq!(net.node(1).queue[0].packet.id, 1);
        assert_eq!(net.in_pipeline(), 2);
    }

    #[test]
    fn strict_mode_rejects_non_neighbor() {
        let snap = line(3, 100.0);
        let pos = positions(3);
        let mut net = Network::new(3, &LinkConfig::default(), 0.01, 12_000.0);
        let mut bad = |_: &DecisionView<'_>, _: &Packet| Some(2);
        let err = net.admit(4, vec![Packet::new(0, 0, 1, 1500, 4)], &snap, &pos, &mut bad);
        assert!(matches!(
            err,
            Err(Error::RoutingContract {
                slot: 4,
                node: 0,
                next_hop: 2
            })
        ));

        let mut net = Network::new(3, &LinkConfig::default(), 0.01, 12_000.0);
        net.set_strict(false);
        net.admit(4, vec![Packet::new(0, 0, 1, 1500, 4)], &snap, &pos, &mut bad)
            .unwrap();
        assert_eq!(net.totals().contract_violations, 1);
        assert_eq!(net.totals().dropped_ttl, 1);
        assert!(net.conservation_holds());
    }

    #[test]
    fn held_packets_are_rerouted_when_a_route_appears() {
        let snap = line(3, 100.0);
        let pos = positions(3);
        let mut net = Network::new(3, &LinkConfig::default(), 0.01, 12_000.0);
        let mut hold = |_: &DecisionView<'_>, _: &Packet| None;
        net.admit(0, vec![Packet::new(0, 0, 2, 1500, 0)], &snap, &pos, &mut hold)
            .unwrap();
        net.forward(1, &snap, &pos, &mut hold).unwrap();
        assert_eq!(net.node(0).queue_len(), 1);
        let mut router = toward_dst;
        net.forward(2, &snap, &pos, &mut router).unwrap();
        assert_eq!(net.node(0).queue_len(), 0);
        assert_eq!(net.in_pipeline(), 1);
    }

    #[test]
    fn severed_egress_is_rerouted() {
        let tri = TopologySnapshot::from_edges(0, 3, &[(0, 1, 100.0), (1, 2, 100.0), (0, 2, 100.0)]).unwrap();
        let pos = positions(3);
        let mut net = Network::new(3, &LinkConfig::default(), 0.01, 12_000.0);
        let mut via1 = |_: &DecisionView<'_>, _: &Packet| Some(1);
        net.admit(0, vec![Packet::new(0, 0, 2, 1500, 0)], &tri, &pos, &mut via1)
            .unwrap();
        let cut = TopologySnapshot::from_edges(1, 3, &[(1, 2, 100.0), (0, 2, 100.0)]).unwrap();
        let mut direct = |_: &DecisionView<'_>, _: &Packet| Some(2);
        net.forward(1, &cut, &pos, &mut direct).unwrap();
        assert_eq!(net.node(0).backlog_for(1), 0);
        assert_eq!(net.in_pipeline(), 1);
    }

    /// Naive per-packet FIFO: serve μ from the front, append A at the back,
    /// drop whatever exceeds the buffer.
    fn fifo_oracle(q: u64, mu: u64, a: u64, max: u64) -> (u64, u64) {
        let mut queue: VecDeque<u64> = (0..q).collect();
        for _ in 0..mu {
            if queue.pop_front().is_none() {
                break;
            }
        }
        let mut overflow = 0;
        for k in 0..a {
            if (queue.len() as u64) < max {
                queue.push_back(q + k);
            } else {
                overflow += 1;
            }
        }
        (queue.len() as u64, overflow)
    }

    proptest! {
        #[test]
        fn step_queue_matches_fifo(q in 0u64..=640, mu in 0u64..1200, a in 0u64..800) {
            let s = step_queue(q, mu, a, 640);
            prop_assert_eq!((s.next, s.overflow), fifo_oracle(q, mu, a, 640));
            prop_assert!(s.next <= 640);
        }
    }
}
