//! Deep Q-learning router and baseline policies.
//!
//! One parameter set is shared by every satellite. Decisions read the
//! online network only; gradient updates and target syncs happen in
//! [`Policy::end_slot`], so parameters never change within a slot.
//!
//! A routing decision opens a pending transition keyed by packet id. The
//! packet's next decision closes it as a non-terminal step; delivery or a
//! drop closes it as terminal (see [`episode_step`]).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constellation::{NodeId, SatellitePosition, TopologySnapshot, MAX_DEGREE};
use crate::error::{Error, Result};
use crate::neural::{masked_argmax, ArchConfig, EncoderKind, GraphFrame, NetInput, Parameters, QNetwork};
use crate::pomdp_env::{
    episode_step, node_frame, reward, FrameHistory, NodeFrame, ObsWindow, Observation, ObservationScales, Outcome,
    RewardWeights, DST_DIM, OBS_LEN, TOPO_DIM,
};
use crate::rng_stream;
use crate::traffic::Packet;
use crate::transport::{DecisionView, Network, PacketEvent, Router, SPEED_OF_LIGHT_KM_S};

/// Graph-attention input width per node row.
pub const FRAME_FEATURES: usize = 1 + TOPO_DIM + DST_DIM + 3 + MAX_DEGREE;
/// Delay normalization used in network inputs, seconds.
pub const FEATURE_DELAY_SCALE_S: f64 = 0.1;

const EXPLORE_STREAM: u64 = 1 << 22;
const REPLAY_STREAM: u64 = (1 << 22) + 1;
const INIT_STREAM: u64 = (1 << 22) + 2;
const RANDOM_POLICY_STREAM: u64 = (1 << 22) + 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonMode {
    /// max(min, start · e^(−t / decay_steps))
    Exponential,
    /// max(min, start · factorᵗ)
    Multiplicative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub min: f64,
    pub mode: EpsilonMode,
    pub decay_steps: f64,
    pub factor: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            min: 0.01,
            mode: EpsilonMode::Exponential,
            decay_steps: 199.5,
            factor: 0.995,
        }
    }
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.start) || !(0.0..=self.start).contains(&self.min) {
            return Err(Error::config("agent.epsilon", "need 0 <= min <= start <= 1"));
        }
        if !(self.decay_steps > 0.0) {
            return Err(Error::config("agent.epsilon.decay_steps", "must be > 0"));
        }
        if !(self.factor > 0.0 && self.factor <= 1.0) {
            return Err(Error::config("agent.epsilon.factor", "must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn epsilon(&self, t: u64) -> f64 {
        let raw = match self.mode {
            EpsilonMode::Exponential => self.start * (-(t as f64) / self.decay_steps).exp(),
            EpsilonMode::Multiplicative => self.start * self.factor.powf(t as f64),
        };
        raw.max(self.min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: ObsWindow,
    pub action: usize,
    pub reward: f64,
    /// `None` when `done`.
    pub next: Option<ObsWindow>,
    pub done: bool,
}

/// FIFO ring with uniform sampling without replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Result<Vec<&Transition>> {
        if self.items.len() < batch {
            return Err(Error::InsufficientBuffer {
                have: self.items.len(),
                need: batch,
            });
        }
        Ok(index::sample(rng, self.items.len(), batch)
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }
}

fn unit_dot(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[0] * b[0], a[1] * b[1], a[2] * b[2]]
}

/// Graph-attention rows for one observation; `None` when the node is isolated.
///
/// Neighbor row: normalized delay, direction (3), normalized distance, alive,
/// destination direction (3), destination distance, direction ⊙ destination
/// direction (3), slot one-hot (4). The self row carries the normalized own
/// queue in the delay position, alive = 1, and the destination features.
pub fn graph_frame(obs: &Observation) -> Option<GraphFrame> {
    let f = &obs.frame;
    if f.degree() == 0 {
        return None;
    }
    let dst = obs.dst_features();
    let mut self_feat = vec![0.0; FRAME_FEATURES];
    self_feat[0] = f.own_queue;
    self_feat[5] = 1.0;
    self_feat[6..10].copy_from_slice(&dst);
    let mut neighbor_feats = vec![0.0; FRAME_FEATURES * MAX_DEGREE];
    for k in 0..MAX_DEGREE {
        if !f.mask[k] {
            continue;
        }
        let row = &mut neighbor_feats[k * FRAME_FEATURES..(k + 1) * FRAME_FEATURES];
        row[0] = f.neighbor_delays[k] / FEATURE_DELAY_SCALE_S;
        row[1..6].copy_from_slice(&f.topo[k]);
        row[6..10].copy_from_slice(&dst);
        row[10..13].copy_from_slice(&unit_dot(&f.topo[k][..3], &dst[..3]));
        row[13 + k] = 1.0;
    }
    Some(GraphFrame {
        self_feat,
        neighbor_feats,
        mask: f.mask.to_vec(),
    })
}

/// Flattened observation with delays in network units.
pub fn flat_features(obs: &Observation) -> Vec<f64> {
    let mut flat = obs.flatten();
    for k in 0..MAX_DEGREE {
        flat[1 + k * (1 + TOPO_DIM)] /= FEATURE_DELAY_SCALE_S;
    }
    debug_assert_eq!(flat.len(), OBS_LEN);
    flat
}

/// Network input for a window; the latest entry must be present.
pub fn net_input(window: &ObsWindow) -> Result<NetInput> {
    let latest = window
        .last()
        .and_then(|o| o.as_ref())
        .ok_or_else(|| Error::Shape("observation window has no current frame".into()))?;
    Ok(NetInput {
        frames: window.iter().map(|o| o.as_ref().and_then(graph_frame)).collect(),
        flat: flat_features(latest),
        mask: latest.mask().to_vec(),
    })
}

pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, mask: &[bool]) -> Result<usize> {
    let valid: Vec<usize> = (0..mask.len()).filter(|&k| mask[k]).collect();
    if valid.is_empty() {
        return Err(Error::NoValidAction);
    }
    Ok(valid[rng.random_range(0..valid.len())])
}

/// ε-greedy over valid actions; greedy ties go to the lowest index.
pub fn select_action<R: Rng + ?Sized>(net: &QNetwork, input: &NetInput, epsilon: f64, rng: &mut R) -> Result<usize> {
    if !input.mask.iter().any(|&m| m) {
        return Err(Error::NoValidAction);
    }
    if rng.random::<f64>() < epsilon {
        return random_policy(rng, &input.mask);
    }
    let q = net.q_values(input)?;
    masked_argmax(&q, &input.mask).ok_or(Error::NoValidAction)
}

/// y = r for terminal steps, else r + γ · max over valid a′ of the target network.
pub fn td_target(reward: f64, next: Option<&NetInput>, done: bool, target: &QNetwork, gamma: f64) -> Result<f64> {
    if done {
        return Ok(reward);
    }
    let next = next.ok_or_else(|| Error::Shape("non-terminal transition without a next observation".into()))?;
    let q = target.q_values(next)?;
    let best = masked_argmax(&q, &next.mask).ok_or(Error::NoValidAction)?;
    Ok(reward + gamma * q[best])
}

/// Copies θ into θ⁻ when `step` is a multiple of `period`. Returns whether it did.
pub fn sync_target(online: &QNetwork, target: &mut QNetwork, step: u64, period: u64) -> bool {
    if period > 0 && step.is_multiple_of(period) {
        target.copy_from(online);
        true
    } else {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    moments: Option<(QNetwork, QNetwork)>,
    steps: u64,
}

impl Optimizer {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            moments: None,
            steps: 0,
        }
    }

    pub fn apply(&mut self, params: &mut QNetwork, grad: &QNetwork) {
        self.steps += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors_mut().into_iter().zip(grad.tensors()) {
                    p.data_mut().iter_mut().zip(g.data()).for_each(|(p, g)| *p -= lr * g);
                }
            }
            OptimizerKind::Adam => {
                let (m, v) = self
                    .moments
                    .get_or_insert_with(|| (grad.zeros_like(), grad.zeros_like()));
                let c1 = 1.0 - Self::BETA1.powf(self.steps as f64);
                let c2 = 1.0 - Self::BETA2.powf(self.steps as f64);
                let tensors = params
                    .tensors_mut()
                    .into_iter()
                    .zip(grad.tensors())
                    .zip(m.tensors_mut())
                    .zip(v.tensors_mut());
                for (((p, g), m), v) in tensors {
                    let it = p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut());
                    for (((p, &g), m), v) in it {
                        *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                        *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub loss: f64,
    pub grad_norm: f64,
    pub mean_reward: f64,
}

/// One gradient step on mean squared TD error over `batch`.
pub fn train_on_batch(
    batch: &[&Transition],
    online: &mut QNetwork,
    target: &QNetwork,
    optimizer: &mut Optimizer,
    gamma: f64,
    grad_clip: f64,
) -> Result<TrainStats> {
    if batch.is_empty() {
        return Err(Error::InsufficientBuffer { have: 0, need: 1 });
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grad = online.zeros_like();
    let mut loss = 0.0;
    let mut reward_sum = 0.0;
    for t in batch {
        let input = net_input(&t.obs)?;
        let next = t.next.as_ref().map(net_input).transpose()?;
        let y = td_target(t.reward, next.as_ref(), t.done, target, gamma)?;
        let (q, cache) = online.forward(&input)?;
        if !input.mask[t.action] {
            return Err(Error::Shape(format!("stored action {} is masked", t.action)));
        }
        let diff = q[t.action] - y;
        loss += diff * diff * scale;
        reward_sum += t.reward;
        let mut dq = vec![0.0; q.len()];
        dq[t.action] = 2.0 * diff * scale;
        online.backward(&input, &cache, &dq, &mut grad);
    }
    let grad_norm = grad.grad_norm();
    if grad_clip > 0.0 && grad_norm > grad_clip {
        grad.scale(grad_clip / grad_norm);
    }
    optimizer.apply(online, &grad);
    Ok(TrainStats {
        loss,
        grad_norm,
        mean_reward: reward_sum * scale,
    })
}

/// Samples a batch and trains on it; errors without touching θ when the buffer is too small.
pub fn train_step<R: Rng + ?Sized>(
    buffer: &ReplayBuffer,
    online: &mut QNetwork,
    target: &QNetwork,
    optimizer: &mut Optimizer,
    config: &AgentConfig,
    rng: &mut R,
) -> Result<TrainStats> {
    let batch = buffer.sample(rng, config.batch_size)?;
    train_on_batch(&batch, online, target, optimizer, config.gamma, config.grad_clip)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Propagation plus transmission delay.
    PropTrans,
    /// Adds the queueing delay of packets already bound for the link.
    QueueAware,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub arch: ArchConfig,
    /// Observation window length fed to the LSTM.
    pub window: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub target_sync_steps: u64,
    pub epsilon: EpsilonSchedule,
    pub grad_clip: f64,
    pub optimizer: OptimizerKind,
    pub updates_per_slot: usize,
    pub dijkstra_weights: WeightMode,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            arch: ArchConfig::default(),
            window: crate::pomdp_env::DEFAULT_WINDOW,
            learning_rate: 1e-4,
            gamma: 0.99,
            replay_capacity: 100_000,
            batch_size: 128,
            target_sync_steps: 200,
            epsilon: EpsilonSchedule::default(),
            grad_clip: 10.0,
            optimizer: OptimizerKind::Sgd,
            updates_per_slot: 1,
            dijkstra_weights: WeightMode::PropTrans,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.epsilon.validate()?;
        if self.window == 0 {
            return Err(Error::config("agent.window", "must be > 0"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("agent.learning_rate", "must be > 0"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("agent.gamma", "must be in (0, 1)"));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return Err(Error::config("agent.batch_size", "must be > 0 and <= replay_capacity"));
        }
        if self.target_sync_steps == 0 {
            return Err(Error::config("agent.target_sync_steps", "must be > 0"));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::config("agent.grad_clip", "must be >= 0"));
        }
        Ok(())
    }
}

struct Pending {
    node: NodeId,
    window: ObsWindow,
    action: usize,
    reward: f64,
}

/// Shared-parameter DQN router over the spatial-temporal or dense encoder.
pub struct DqnAgent {
    config: AgentConfig,
    weights: RewardWeights,
    scales: ObservationScales,
    online: QNetwork,
    target: QNetwork,
    optimizer: Optimizer,
    buffer: ReplayBuffer,
    history: FrameHistory,
    pending: BTreeMap<u64, Pending>,
    positions: Option<Arc<[SatellitePosition]>>,
    explore_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    step: u64,
    training: bool,
    decisions: u64,
    last_stats: Option<TrainStats>,
}

impl DqnAgent {
    pub fn new(
        config: &AgentConfig,
        weights: &RewardWeights,
        scales: ObservationScales,
        num_nodes: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        weights.validate()?;
        let online = QNetwork::new(
            &config.arch,
            FRAME_FEATURES,
            OBS_LEN,
            MAX_DEGREE,
            &mut rng_stream(seed, INIT_STREAM),
        )?;
        Ok(Self {
            config: config.clone(),
            weights: weights.clone(),
            scales,
            target: online.clone(),
            online,
            optimizer: Optimizer::new(config.optimizer, config.learning_rate),
            buffer: ReplayBuffer::new(config.replay_capacity),
            history: FrameHistory::new(num_nodes, config.window),
            pending: BTreeMap::new(),
            positions: None,
            explore_rng: rng_stream(seed, EXPLORE_STREAM),
            replay_rng: rng_stream(seed, REPLAY_STREAM),
            step: 0,
            training: true,
            decisions: 0,
            last_stats: None,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn set_online(&mut self, net: QNetwork) {
        self.target = net.clone();
        self.online = net;
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// Global slot counter driving ε and target syncs.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epsilon(&self) -> f64 {
        if self.training {
            self.config.epsilon.epsilon(self.step)
        } else {
            0.0
        }
    }

    pub fn decisions(&self) -> u64 {
        self.decisions
    }

    pub fn last_stats(&self) -> Option<TrainStats> {
        self.last_stats
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
        if !training {
            self.pending.clear();
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    fn close(&mut self, packet_id: u64, outcome: Outcome) {
        if let Some(p) = self.pending.remove(&packet_id) {
            let step = episode_step(&self.weights, p.reward, outcome);
            self.buffer.push(Transition {
                obs: p.window,
                action: p.action,
                reward: step.reward,
                next: step.next,
                done: step.done,
            });
        }
    }

    fn decide(&mut self, view: &DecisionView<'_>, packet: &Packet) -> Result<Option<NodeId>> {
        let positions = match &self.positions {
            Some(p) => Arc::clone(p),
            None => Arc::from(view.positions),
        };
        let frame = Arc::new(node_frame(
            view.slot,
            view.node,
            view.snapshot,
            view.network,
            &positions,
            self.scales,
        ));
        if frame.degree() == 0 {
            return Ok(None);
        }
        let window = self.history.window_for(Arc::clone(&frame), packet.dst);
        let input = net_input(&window)?;
        let action = select_action(&self.online, &input, self.epsilon(), &mut self.explore_rng)?;
        self.decisions += 1;
        let hop = frame.neighbor_at(action);
        if self.training {
            let r = reward(
                &self.weights,
                frame.neighbor_delays[action],
                view.node_state().queue_len() as f64,
            );
            match self.pending.get(&packet.id) {
                Some(prev) if prev.node == view.node => {
                    self.pending.remove(&packet.id);
                }
                Some(_) => self.close(packet.id, Outcome::Forwarded(window.clone())),
                None => {}
            }
            self.pending.insert(
                packet.id,
                Pending {
                    node: view.node,
                    window,
                    action,
                    reward: r,
                },
            );
        }
        Ok(hop)
    }

    pub fn begin_slot(&mut self, positions: &Arc<[SatellitePosition]>) {
        self.positions = Some(Arc::clone(positions));
    }

    pub fn on_events(&mut self, events: &[PacketEvent]) {
        if !self.training {
            return;
        }
        for e in events {
            match e {
                PacketEvent::Delivered { packet, .. } => self.close(packet.id, Outcome::Delivered),
                PacketEvent::Dropped { packet, .. } => self.close(packet.id, Outcome::Dropped),
            }
        }
    }

    /// Records end-of-slot frames, then trains and syncs the target network.
    pub fn end_slot(
        &mut self,
        slot: u64,
        snapshot: &TopologySnapshot,
        network: &Network,
    ) -> Result<Option<TrainStats>> {
        let positions = match &self.positions {
            Some(p) => Arc::clone(p),
            None => return Err(Error::Shape("end_slot called before begin_slot".into())),
        };
        let frames: Vec<Arc<NodeFrame>> = (0..snapshot.num_nodes())
            .map(|n| Arc::new(node_frame(slot, n, snapshot, network, &positions, self.scales)))
            .collect();
        self.history.push(frames);
        if !self.training {
            return Ok(None);
        }
        let mut stats = None;
        if self.buffer.len() >= self.config.batch_size {
            for _ in 0..self.config.updates_per_slot {
                stats = Some(train_step(
                    &self.buffer,
                    &mut self.online,
                    &self.target,
                    &mut self.optimizer,
                    &self.config,
                    &mut self.replay_rng,
                )?);
            }
        }
        self.step += 1;
        sync_target(&self.online, &mut self.target, self.step, self.config.target_sync_steps);
        self.last_stats = stats;
        Ok(stats)
    }

    /// Drops episode-local state: open transitions and frame history.
    pub fn reset_episode(&mut self) {
        self.pending.clear();
        self.history.clear();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry {
    cost: f64,
    node: NodeId,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All-pairs next hops on one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct NextHopTable {
    n: usize,
    next: Vec<Option<NodeId>>,
    cost: Vec<f64>,
}

impl NextHopTable {
    pub fn next_hop(&self, src: NodeId, dst: NodeId) -> Option<NodeId> {
        self.next[src * self.n + dst]
    }

    /// Path cost from `src` to `dst`; infinite when unreachable.
    pub fn cost(&self, src: NodeId, dst: NodeId) -> f64 {
        self.cost[src * self.n + dst]
    }
}

/// Shortest-path next hops under the directed edge cost `cost(from, to, distance_km)`.
/// Equal-cost candidates resolve to the lowest neighbor id.
pub fn shortest_next_hops<F>(snapshot: &TopologySnapshot, cost: F) -> NextHopTable
where
    F: Fn(NodeId, NodeId, f64) -> f64,
{
    let n = snapshot.num_nodes();
    let mut table = NextHopTable {
        n,
        next: vec![None; n * n],
        cost: vec![f64::INFINITY; n * n],
    };
    let mut dist = vec![f64::INFINITY; n];
    for dst in 0..n {
        dist.fill(f64::INFINITY);
        dist[dst] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(HeapEntry { cost: 0.0, node: dst });
        while let Some(HeapEntry { cost: c, node: u }) = heap.pop() {
            if c > dist[u] {
                continue;
            }
            for (&v, &d) in snapshot.neighbors(u).iter().zip(snapshot.neighbor_distances(u)) {
                let nd = c + cost(v, u, d);
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(HeapEntry { cost: nd, node: v });
                }
            }
        }
        for src in 0..n {
            table.cost[src * n + dst] = dist[src];
            if src == dst || !dist[src].is_finite() {
                continue;
            }
            let mut best: Option<(NodeId, f64)> = None;
            for (&u, &d) in snapshot.neighbors(src).iter().zip(snapshot.neighbor_distances(src)) {
                let c = cost(src, u, d) + dist[u];
                if best.is_none_or(|(_, b)| c < b - 1e-12 * b.abs()) {
                    best = Some((u, c));
                }
            }
            table.next[src * n + dst] = best.map(|(u, _)| u);
        }
    }
    table
}

/// Next-hop table for the current slot under the configured edge weights.
pub fn dijkstra_policy(snapshot: &TopologySnapshot, network: &Network, mode: WeightMode) -> NextHopTable {
    let trans = network.packet_bits() / network.link_config().capacity_bps;
    shortest_next_hops(snapshot, |from, to, d| {
        let base = d / SPEED_OF_LIGHT_KM_S + trans;
        match mode {
            WeightMode::PropTrans => base,
            WeightMode::QueueAware => base + network.node(from).backlog_for(to) as f64 * trans,
        }
    })
}

/// Topology-adaptive shortest-path router, recomputed once per slot.
pub struct DijkstraRouter {
    mode: WeightMode,
    table: Option<(u64, NextHopTable)>,
}

impl DijkstraRouter {
    pub fn new(mode: WeightMode) -> Self {
        Self { mode, table: None }
    }
}

impl Router for DijkstraRouter {
    fn next_hop(&mut self, view: &DecisionView<'_>, packet: &Packet) -> Option<NodeId> {
        if self.table.as_ref().is_none_or(|(s, _)| *s != view.slot) {
            self.table = Some((view.slot, dijkstra_policy(view.snapshot, view.network, self.mode)));
        }
        self.table.as_ref().and_then(|(_, t)| t.next_hop(view.node, packet.dst))
    }
}

/// Uniformly random valid neighbor.
pub struct RandomRouter {
    rng: ChaCha8Rng,
}

impl RandomRouter {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: rng_stream(seed, RANDOM_POLICY_STREAM),
        }
    }
}

impl Router for RandomRouter {
    fn next_hop(&mut self, view: &DecisionView<'_>, _packet: &Packet) -> Option<NodeId> {
        let nbrs = view.snapshot.neighbors(view.node);
        if nbrs.is_empty() {
            return None;
        }
        Some(nbrs[self.rng.random_range(0..nbrs.len())])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Proposed,
    Dijkstra,
    MlpDqn,
    Random,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Proposed => "proposed",
            PolicyKind::Dijkstra => "dijkstra",
            PolicyKind::MlpDqn => "mlp_dqn",
            PolicyKind::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(PolicyKind::Proposed),
            "dijkstra" => Ok(PolicyKind::Dijkstra),
            "mlp_dqn" => Ok(PolicyKind::MlpDqn),
            "random" => Ok(PolicyKind::Random),
            other => Err(Error::config("run.policy", format!("unknown policy `{other}`"))),
        }
    }

    pub fn is_learning(self) -> bool {
        matches!(self, PolicyKind::Proposed | PolicyKind::MlpDqn)
    }
}

/// A routing policy plus its per-slot lifecycle hooks.
#[allow(clippy::large_enum_variant)]
pub enum Policy {
    Learned(Box<DqnAgent>),
    Dijkstra(DijkstraRouter),
    Random(RandomRouter),
}

impl Policy {
    pub fn build(
        kind: PolicyKind,
        config: &AgentConfig,
        weights: &RewardWeights,
        scales: ObservationScales,
        num_nodes: usize,
        seed: u64,
    ) -> Result<Self> {
        Ok(match kind {
            PolicyKind::Proposed => {
                let mut cfg = config.clone();
                cfg.arch.encoder = EncoderKind::SpatialTemporal;
                Policy::Learned(Box::new(DqnAgent::new(&cfg, weights, scales, num_nodes, seed)?))
            }
            PolicyKind::MlpDqn => {
                let mut cfg = config.clone();
                cfg.arch.encoder = EncoderKind::Dense;
                Policy::Learned(Box::new(DqnAgent::new(&cfg, weights, scales, num_nodes, seed)?))
            }
            PolicyKind::Dijkstra => Policy::Dijkstra(DijkstraRouter::new(config.dijkstra_weights)),
            PolicyKind::Random => Policy::Random(RandomRouter::new(seed)),
        })
    }

    pub fn agent(&self) -> Option<&DqnAgent> {
        match self {
            Policy::Learned(a) => Some(a),
            _ => None,
        }
    }

    pub fn agent_mut(&mut self) -> Option<&mut DqnAgent> {
        match self {
            Policy::Learned(a) => Some(a),
            _ => None,
        }
    }

    pub fn begin_slot(&mut self, positions: &Arc<[SatellitePosition]>) {
        if let Policy::Learned(a) = self {
            a.begin_slot(positions);
        }
    }

    pub fn on_events(&mut self, events: &[PacketEvent]) {
        if let Policy::Learned(a) = self {
            a.on_events(events);
        }
    }

    pub fn end_slot(
        &mut self,
        slot: u64,
        snapshot: &TopologySnapshot,
        network: &Network,
    ) -> Result<Option<TrainStats>> {
        match self {
            Policy::Learned(a) => a.end_slot(slot, snapshot, network),
            _ => Ok(None),
        }
    }

    pub fn reset_episode(&mut self) {
        if let Policy::Learned(a) = self {
            a.reset_episode();
        }
    }

    pub fn set_training(&mut self, training: bool) {
        if let Policy::Learned(a) = self {
            a.set_training(training);
        }
    }
}

impl Router for Policy {
    fn next_hop(&mut self, view: &DecisionView<'_>, packet: &Packet) -> Option<NodeId> {
        match self {
            // A window without a current frame or an all-masked node holds the packet.
            Policy::Learned(a) => a.decide(view, packet).unwrap_or(None),
            Policy::Dijkstra(d) => d.next_hop(view, packet),
            Policy::Random(r) => r.next_hop(view, packet),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::{build_constellation, snapshot, ConstellationConfig};
    use crate::neural::Tensor;
    use crate::transport::LinkConfig;

    #[test]
    fn epsilon_values() {
        let s = EpsilonSchedule::default();
        assert_eq!(s.epsilon(0), 1.0);
        assert_eq!(s.epsilon(1_000_000), 0.01);
        let k = EpsilonSchedule {
            decay_steps: 200.0,
            ..EpsilonSchedule::default()
        };
        assert!((k.epsilon(200) - (-1.0f64).exp()).abs() < 1e-15);
        // Per-step factor of the default matches 0.995 to within the rounding of K.
        assert!((s.epsilon(1) - 0.995).abs() < 1e-5);
        let m = EpsilonSchedule {
            mode: EpsilonMode::Multiplicative,
            ..EpsilonSchedule::default()
        };
        assert!((m.epsilon(10) - 0.995f64.powi(10)).abs() < 1e-15);
    }

    fn transition(tag: f64) -> Transition {
        Transition {
            obs: vec![None],
            action: 0,
            reward: tag,
            next: None,
            done: true,
        }
    }

    #[test]
    fn buffer_evicts_oldest_first() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(transition(i as f64));
        }
        assert_eq!(b.len(), 3);
        let rewards: Vec<f64> = b.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
        assert!(matches!(
            b.sample(&mut rng_stream(0, 0), 4),
            Err(Error::InsufficientBuffer { have: 3, need: 4 })
        ));
        assert_eq!(b.sample(&mut rng_stream(0, 0), 3).unwrap().len(), 3);
    }

    #[test]
    fn random_policy_single_and_uniform() {
        let mut rng = rng_stream(1, 0);
        for _ in 0..100 {
            assert_eq!(random_policy(&mut rng, &[false, false, false, true]).unwrap(), 3);
        }
        let mask = [true, false, true, true];
        let mut counts = [0u32; 4];
        let n = 30_000;
        for _ in 0..n {
            counts[random_policy(&mut rng, &mask).unwrap()] += 1;
        }
        assert_eq!(counts[1], 0);
        let p = 1.0 / 3.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for k in [0, 2, 3] {
            assert!((counts[k] as f64 - n as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
        assert!(random_policy(&mut rng, &[false; 4]).is_err());
        let a: Vec<usize> = (0..20)
            .map(|_| random_policy(&mut rng_stream(5, 1), &mask).unwrap())
            .collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
    }

    fn tiny_net() -> QNetwork {
        let arch = ArchConfig {
            gat_heads: 2,
            gat_hidden: 4,
            lstm_hidden: 4,
            head_hidden: 4,
            dense_hidden: 4,
            ..ArchConfig::default()
        };
        QNetwork::new(&arch, FRAME_FEATURES, OBS_LEN, MAX_DEGREE, &mut rng_stream(3, 0)).unwrap()
    }

    /// Forces Q = (0.1, 0.9, 0.9, x) regardless of input by zeroing the last layer's weights.
    fn fixed_q_net(values: [f64; 4]) -> QNetwork {
        let mut net = tiny_net();
        net.head.output.weight.fill(0.0);
        net.head.output.bias = Tensor::from_vec(&[4], values.to_vec()).unwrap();
        net
    }

    fn sample_window() -> ObsWindow {
        let cfg = ConstellationConfig {
            polar_cutoff_deg: 90.0,
            ..ConstellationConfig::default()
        };
        let roster = build_constellation(&cfg).unwrap();
        let pos: Arc<[SatellitePosition]> = roster.propagate(0).into();
        let snap = snapshot(0, &pos, &cfg);
        let net = Network::new(45, &LinkConfig::default(), 0.01, 12_000.0);
        let scales = ObservationScales {
            altitude_km: cfg.altitude_km,
            orbit_radius_km: cfg.orbit_radius_km(),
        };
        let hist = FrameHistory::new(45, 3);
        hist.window_for(Arc::new(node_frame(0, 0, &snap, &net, &pos, scales)), 20)
    }

    #[test]
    fn greedy_tie_goes_to_lowest_index() {
        let net = fixed_q_net([0.1, 0.9, 0.9, 5.0]);
        let mut input = net_input(&sample_window()).unwrap();
        input.mask = vec![true, true, true, false];
        assert_eq!(select_action(&net, &input, 0.0, &mut rng_stream(0, 0)).unwrap(), 1);
        input.mask = vec![false, false, false, true];
        for seed in 0..20 {
            assert_eq!(select_action(&net, &input, 1.0, &mut rng_stream(seed, 0)).unwrap(), 3);
        }
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let net = tiny_net();
        let input = net_input(&sample_window()).unwrap();
        let mut rng = rng_stream(8, 0);
        let n = 10_000;
        let mut counts = [0u32; 4];
        for _ in 0..n {
            counts[select_action(&net, &input, 1.0, &mut rng).unwrap()] += 1;
        }
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 / 4.0).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn td_target_examples() {
        let target = fixed_q_net([2.0, 1.0, -3.0, 0.0]);
        let next = net_input(&sample_window()).unwrap();
        assert_eq!(td_target(-5.0, Some(&next), true, &target, 0.99).unwrap(), -5.0);
        assert!((td_target(1.0, Some(&next), false, &target, 0.99).unwrap() - 2.98).abs() < 1e-12);
        assert!((td_target(1.0, Some(&next), false, &target, 1e-12).unwrap() - 1.0).abs() < 1e-11);
    }

    #[test]
    fn sync_period() {
        let online = tiny_net();
        let mut target = fixed_q_net([0.0; 4]);
        assert!(!sync_target(&online, &mut target, 201, 200));
        assert_ne!(target, online);
        assert!(sync_target(&online, &mut target, 200, 200));
        assert_eq!(target, online);
    }

    #[test]
    fn fixed_point_batch_has_zero_loss() {
        let mut net = tiny_net();
        let window = sample_window();
        let q = net.q_values(&net_input(&window).unwrap()).unwrap();
        let t = Transition {
            obs: window,
            action: 2,
            reward: q[2],
            next: None,
            done: true,
        };
        let batch = vec![&t, &t, &t];
        let before = net.clone();
        let target = net.clone();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 1e-2);
        let stats = train_on_batch(&batch, &mut net, &target, &mut opt, 0.99, 10.0).unwrap();
        assert_eq!(stats.loss, 0.0);
        assert_eq!(stats.grad_norm, 0.0);
        assert_eq!(net, before);
    }

    #[test]
    fn dijkstra_triangle_and_single_edge() {
        let tri = TopologySnapshot::from_edges(0, 3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 3.0)]).unwrap();
        let t = shortest_next_hops(&tri, |_, _, d| d);
        assert_eq!(t.next_hop(0, 2), Some(1));
        assert_eq!(t.cost(0, 2), 2.0);
        let one = TopologySnapshot::from_edges(0, 2, &[(0, 1, 5.0)]).unwrap();
        let t = shortest_next_hops(&one, |_, _, d| d);
        assert_eq!(t.next_hop(0, 1), Some(1));
        assert_eq!(t.next_hop(1, 0), Some(0));
        let split = TopologySnapshot::from_edges(0, 3, &[(0, 1, 1.0)]).unwrap();
        let t = shortest_next_hops(&split, |_, _, d| d);
        assert_eq!(t.next_hop(0, 2), None);
        assert!(t.cost(0, 2).is_infinite());
    }

    #[test]
    fn dijkstra_equal_costs_pick_lowest_id() {
        // Square 0-1-3-2-0: both routes from 0 to 3 cost 2.
        let sq = TopologySnapshot::from_edges(0, 4, &[(0, 1, 1.0), (1, 3, 1.0), (0, 2, 1.0), (2, 3, 1.0)]).unwrap();
        assert_eq!(shortest_next_hops(&sq, |_, _, d| d).next_hop(0, 3), Some(1));
    }
}
